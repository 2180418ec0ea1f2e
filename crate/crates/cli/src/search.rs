use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use hcnas::init::DEFAULT_TOL;
use hcnas::latency::load_table;
use hcnas::optimizer::{gd_penalty_search, SearchError};
use hcnas::project::{project_credit_greedy, projection_report, ProjectError, ProjectionReport};
use hcnas::{
    balanced_init, bcsfw_search, discrete_latency, discrete_score, expected_latency, lightest_init,
    project_argmax, project_credit, ArchParams, BlockRule, DiscreteArch, LatencyTable, ObjectiveSpec,
    SolverConfig, SpaceSpec, StepSchedule, FEASIBILITY_TOL,
};

use crate::{budget_repr, read, resolve_seed, to_json, write, CliError, CliResult, ProblemArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    Lightest,
    Balanced,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Re-run a recorded manifest. Other problem flags are then ignored.
    #[arg(long, conflicts_with_all = ["space", "latency_table", "objective", "budget_ms"])]
    pub manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub space: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub latency_table: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub objective: Option<PathBuf>,
    #[arg(long, alias = "budget", required_unless_present = "manifest", allow_negative_numbers = true)]
    pub budget_ms: Option<f64>,
    #[arg(long, default_value_t = hcnas::optimizer::DEFAULT_MAX_ITERS)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = InitMethod::Balanced)]
    pub init: InitMethod,
    /// fw4, fw2 or fixed:<step>
    #[arg(long, default_value = "fw4")]
    pub schedule: StepSchedule,
    /// random or alternate
    #[arg(long, default_value = "random")]
    pub block_rule: BlockRule,
    /// Also discretize with the greedy integral knapsack solver.
    #[arg(long)]
    pub exact_mckp: bool,
    /// Output directory; overrides the manifest's when re-running.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Everything that determines a search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub space: PathBuf,
    pub latency_table: PathBuf,
    pub objective: PathBuf,
    #[serde(with = "budget_repr")]
    pub budget_ms: f64,
    pub init: InitMethod,
    pub solver: SolverSection,
    pub exact_mckp: bool,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSection {
    pub max_iters: usize,
    pub schedule: String,
    pub block_rule: String,
    pub tolerance: f64,
}

impl RunManifest {
    pub fn solver_config(&self) -> Result<SolverConfig, CliError> {
        Ok(SolverConfig {
            max_iters: self.solver.max_iters,
            schedule: self.solver.schedule.parse().map_err(|e| anyhow!("manifest schedule: {e}"))?,
            block_rule: self.solver.block_rule.parse().map_err(|e| anyhow!("manifest block rule: {e}"))?,
            seed: self.seed,
            budget_ms: self.budget_ms,
            tolerance: self.solver.tolerance,
        })
    }
}

impl SearchArgs {
    fn manifest(self) -> Result<RunManifest, CliError> {
        if let Some(path) = &self.manifest {
            let mut m: RunManifest =
                serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
            if let Some(out) = self.out {
                m.out = out;
            }
            return Ok(m);
        }
        let missing = |what: &str| CliError::Input(anyhow!("--{what} is required"));
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: resolve_seed(self.seed)?,
            space: self.space.ok_or_else(|| missing("space"))?,
            latency_table: self.latency_table.ok_or_else(|| missing("latency-table"))?,
            objective: self.objective.ok_or_else(|| missing("objective"))?,
            budget_ms: self.budget_ms.ok_or_else(|| missing("budget-ms"))?,
            init: self.init,
            solver: SolverSection {
                max_iters: self.iters,
                schedule: self.schedule.to_string(),
                block_rule: self.block_rule.to_string(),
                tolerance: SolverConfig::default().tolerance,
            },
            exact_mckp: self.exact_mckp,
            out: self.out.unwrap_or_else(|| PathBuf::from("hcnas-out")),
        })
    }
}

#[derive(Debug, Serialize)]
struct Discretized {
    arch: DiscreteArch,
    latency_ms: f64,
    credit: f64,
    score: f64,
}

#[derive(Debug, Serialize)]
struct SearchResult {
    #[serde(flatten)]
    chosen: Discretized,
    #[serde(with = "budget_repr")]
    budget_ms: f64,
    initial_latency_ms: f64,
    continuous_latency_ms: f64,
    used_argmax: bool,
    report: ProjectionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    greedy: Option<Discretized>,
}

pub(crate) struct Problem {
    pub spec: SpaceSpec,
    pub table: LatencyTable,
    pub objective: ObjectiveSpec,
}

pub(crate) fn load_space(path: &Path) -> Result<SpaceSpec, CliError> {
    Ok(SpaceSpec::from_json(&read(path)?).with_context(|| format!("parsing {}", path.display()))?)
}

pub(crate) fn load_problem(space: &Path, table: &Path, objective: &Path) -> Result<Problem, CliError> {
    let spec = load_space(space)?;
    let table = load_table(table, Some(&spec)).with_context(|| format!("loading {}", table.display()))?;
    let objective =
        ObjectiveSpec::from_json(&read(objective)?).with_context(|| format!("parsing {}", objective.display()))?;
    if let Some(u) = &objective.utilities {
        if u.shape() != spec.shape() {
            return Err(anyhow!("objective utilities are {}, space is {}", u.shape(), spec.shape()).into());
        }
    }
    Ok(Problem { spec, table, objective })
}

/// Starting point, or exit 2 when even the lightest architecture is over budget.
fn start(problem: &Problem, init: InitMethod, budget: f64) -> Result<(ArchParams, f64), CliError> {
    let lightest = lightest_init(&problem.spec, &problem.table)?;
    let minimal = expected_latency(&lightest, &problem.table)?;
    if budget.is_nan() || budget < minimal - FEASIBILITY_TOL {
        return Err(CliError::Infeasible { minimal_ms: minimal, budget_ms: budget });
    }
    let init = match init {
        InitMethod::Lightest => lightest,
        InitMethod::Balanced => balanced_init(&problem.spec, &problem.table, budget, DEFAULT_TOL)?,
    };
    Ok((init, minimal))
}

fn search_error(e: SearchError, minimal: f64) -> CliError {
    match e {
        SearchError::InfeasibleInit { budget, .. } => CliError::Infeasible { minimal_ms: minimal, budget_ms: budget },
        other => CliError::Input(other.into()),
    }
}

fn project_error(e: ProjectError, minimal: f64) -> CliError {
    match e {
        ProjectError::Infeasible { budget, .. } => CliError::Infeasible { minimal_ms: minimal, budget_ms: budget },
        other => CliError::Input(other.into()),
    }
}

pub fn cmd_search(args: SearchArgs) -> CliResult {
    let manifest = args.manifest()?;
    let cfg = manifest.solver_config()?;
    let problem = load_problem(&manifest.space, &manifest.latency_table, &manifest.objective)?;
    let budget = manifest.budget_ms;
    let (init, minimal) = start(&problem, manifest.init, budget)?;
    log::info!("minimal achievable latency {minimal} ms, budget {budget} ms");

    let trace = bcsfw_search(&init, &problem.objective, &problem.table, &cfg).map_err(|e| search_error(e, minimal))?;
    let params = &trace.final_params;
    let projection = project_credit(params, &problem.table, budget).map_err(|e| project_error(e, minimal))?;
    let greedy = if manifest.exact_mckp {
        let g = project_credit_greedy(params, &problem.table, budget).map_err(|e| project_error(e, minimal))?;
        Some(Discretized {
            score: discrete_score(&g.arch, &problem.objective),
            arch: g.arch,
            latency_ms: g.latency,
            credit: g.credit,
        })
    } else {
        None
    };

    let latency = discrete_latency(&projection.arch, &problem.table);
    assert!(latency <= budget + FEASIBILITY_TOL, "projected latency {latency} exceeds budget {budget}");
    let result = SearchResult {
        chosen: Discretized {
            score: discrete_score(&projection.arch, &problem.objective),
            arch: projection.arch.clone(),
            latency_ms: latency,
            credit: projection.credit,
        },
        budget_ms: budget,
        initial_latency_ms: trace.initial_latency,
        continuous_latency_ms: trace.final_latency(),
        used_argmax: projection.used_argmax,
        report: projection_report(params, &problem.table, &projection),
        greedy,
    };

    let out = &manifest.out;
    write(&out.join("result.json"), &to_json(&result))?;
    write(&out.join("trace.csv"), &trace.to_csv())?;
    write(&out.join("params.json"), &to_json(params))?;
    write(&out.join("manifest.json"), &to_json(&manifest))?;
    println!(
        "latency {latency} ms (budget {budget} ms), score {}, written to {}",
        result.chosen.score,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Penalty weight on latency above the budget.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = hcnas::optimizer::DEFAULT_MAX_ITERS)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = InitMethod::Balanced)]
    pub init: InitMethod,
    #[arg(long, default_value = "hcnas-out")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct BaselineResult {
    lambda: f64,
    lr: f64,
    #[serde(with = "budget_repr")]
    budget_ms: f64,
    continuous_latency_ms: f64,
    violates_budget: bool,
    argmax: DiscreteArch,
    argmax_latency_ms: f64,
    argmax_score: f64,
}

pub fn cmd_baseline(args: BaselineArgs) -> CliResult {
    let p = &args.problem;
    let problem = load_problem(&p.space, &p.latency_table, &p.objective)?;
    let budget = p.budget_ms;
    let (init, minimal) = start(&problem, args.init, budget)?;
    let cfg = SolverConfig { max_iters: args.iters, seed: resolve_seed(args.seed)?, budget_ms: budget, ..Default::default() };
    let trace = gd_penalty_search(&init, &problem.objective, &problem.table, args.lambda, args.lr, &cfg)
        .map_err(|e| search_error(e, minimal))?;
    write(&args.out.join("trace.csv"), &trace.to_csv())?;
    if trace.diverged {
        return Err(CliError::Diverged(format!(
            "penalty GD with lambda {} and lr {} after {} iterations",
            args.lambda,
            args.lr,
            trace.records.len()
        )));
    }
    let argmax = project_argmax(&trace.final_params);
    let latency = trace.final_latency();
    let result = BaselineResult {
        lambda: args.lambda,
        lr: args.lr,
        budget_ms: budget,
        continuous_latency_ms: latency,
        violates_budget: latency > budget + FEASIBILITY_TOL,
        argmax_latency_ms: discrete_latency(&argmax, &problem.table),
        argmax_score: discrete_score(&argmax, &problem.objective),
        argmax,
    };
    write(&args.out.join("result.json"), &to_json(&result))?;
    write(&args.out.join("params.json"), &to_json(&trace.final_params))?;
    println!("continuous latency {latency} ms (budget {budget} ms), violates budget: {}", result.violates_budget);
    Ok(())
}
