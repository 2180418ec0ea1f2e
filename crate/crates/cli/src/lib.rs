//! The `hcnas` command line.
//!
//! Every subcommand is a plain function over parsed arguments returning
//! `Result<(), CliError>`; [`run`] maps the error to the process exit code.
//! Outputs are JSON and CSV only and depend on nothing but the inputs and the
//! seed, so re-running a recorded manifest reproduces them byte for byte.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

mod gen;
mod inspect;
mod search;
mod toy;

pub use gen::{cmd_gen, GenArgs, GenKind};
pub use inspect::{cmd_enumerate, cmd_project, cmd_validate_latency, EnumerateArgs, ProjectArgs, ValidateArgs};
pub use search::{cmd_baseline, cmd_search, BaselineArgs, InitMethod, RunManifest, SearchArgs};
pub use toy::{cmd_toy, ToyArgs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Overrides `--seed` on every command that takes one.
pub const SEED_ENV: &str = "HCNAS_SEED";

#[derive(Debug)]
pub enum CliError {
    Input(anyhow::Error),
    Infeasible { minimal_ms: f64, budget_ms: f64 },
    /// A continuous point handed to projection is already over budget.
    OverBudget { latency_ms: f64, budget_ms: f64 },
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Infeasible { .. } | CliError::OverBudget { .. } => EXIT_INFEASIBLE,
            CliError::Diverged(_) => EXIT_DIVERGED,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(e) => write!(f, "{e:#}"),
            CliError::Infeasible { minimal_ms, budget_ms } => write!(
                f,
                "infeasible budget: {budget_ms} ms is below the minimal achievable latency {minimal_ms} ms"
            ),
            CliError::OverBudget { latency_ms, budget_ms } => write!(
                f,
                "parameters have expected latency {latency_ms} ms, above the budget {budget_ms} ms"
            ),
            CliError::Diverged(what) => write!(f, "diverged: {what}"),
        }
    }
}

macro_rules! input_errors {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Input(e.into())
            }
        })*
    };
}

input_errors!(
    anyhow::Error,
    std::io::Error,
    serde_json::Error,
    csv::Error,
    hcnas::space::SpaceError,
    hcnas::latency::LatencyError,
    hcnas::objective::ObjectiveError,
    hcnas::init::InitError,
    hcnas::oracle::OracleError,
);

pub type CliResult = Result<(), CliError>;

#[derive(Debug, Parser)]
#[command(name = "hcnas", version, about = "Latency-constrained architecture search with Frank-Wolfe")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search under a latency budget and project to a discrete architecture.
    Search(SearchArgs),
    /// Penalty gradient-descent baseline on the same problem.
    Baseline(BaselineArgs),
    /// Frank-Wolfe versus penalty GD on the simplex toy problem.
    Toy(ToyArgs),
    /// Compare the latency formula against Monte-Carlo sampled architectures.
    ValidateLatency(ValidateArgs),
    /// Write a seeded synthetic space, latency table or objective.
    Gen(GenArgs),
    /// Discretize continuous parameters under a budget.
    Project(ProjectArgs),
    /// Brute-force every architecture of a small space.
    Enumerate(EnumerateArgs),
}

/// Inputs shared by `search` and `baseline`.
#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub latency_table: PathBuf,
    #[arg(long)]
    pub objective: PathBuf,
    #[arg(long, alias = "budget", allow_negative_numbers = true)]
    pub budget_ms: f64,
}

/// Parses `args` and runs the command. Usage errors exit 1 so that 2 stays
/// reserved for infeasible budgets.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INPUT
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Search(a) => cmd_search(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Toy(a) => cmd_toy(a),
        Command::ValidateLatency(a) => cmd_validate_latency(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Project(a) => cmd_project(a),
        Command::Enumerate(a) => cmd_enumerate(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// `HCNAS_SEED` when set, else the flag.
pub(crate) fn resolve_seed(flag: u64) -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Input(anyhow::anyhow!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

pub(crate) fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(anyhow::anyhow!("cannot read {}: {e}", path.display())))
}

pub(crate) fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Input(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

/// Writes to `path`, or to stdout without one.
pub(crate) fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write(p, text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub(crate) fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

/// Budgets may be infinite, which JSON numbers cannot express.
pub(crate) mod budget_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad budget {t:?}"))),
        }
    }
}
