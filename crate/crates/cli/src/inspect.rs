use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use hcnas::latency::load_table;
use hcnas::oracle::ScoredArch;
use hcnas::project::{project_credit_greedy, projection_report, ProjectError, ProjectionReport};
use hcnas::{
    discrete_latency, enumerate, expected_latency, gumbel_sample, lightest_init, project_credit, to_discrete,
    ArchParams, DiscreteArch, SampleMode,
};

use crate::search::{load_problem, load_space};
use crate::{budget_repr, emit, read, resolve_seed, to_json, write, CliError, CliResult};

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub latency_table: PathBuf,
    /// Sampled architectures per point.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Random continuous points.
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "hcnas-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line `y = intercept + slope x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LineFit { slope, intercept: my - slope * mx, r2 }
}

/// Monte-Carlo stand-in for on-device measurement: the mean latency of
/// architectures drawn from each point, against the closed form. Points are
/// soft Gumbel draws around the uniform point.
pub fn cmd_validate_latency(args: ValidateArgs) -> CliResult {
    if args.points < 2 || args.samples == 0 {
        return Err(anyhow!("need at least 2 points and 1 sample").into());
    }
    let spec = load_space(&args.space)?;
    let table = load_table(&args.latency_table, Some(&spec)).context("loading latency table")?;
    let mut rng = ChaCha8Rng::seed_from_u64(resolve_seed(args.seed)?);
    let uniform = ArchParams::uniform(&spec);
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["formula_latency", "monte_carlo_latency"])?;
    let (mut formula, mut measured) = (Vec::new(), Vec::new());
    for _ in 0..args.points {
        let p = gumbel_sample(&uniform, 1.0, SampleMode::Soft, &mut rng)?.point;
        let f = expected_latency(&p, &table)?;
        let mut total = 0.0;
        for _ in 0..args.samples {
            let hard = gumbel_sample(&p, 1.0, SampleMode::Hard, &mut rng)?.point;
            total += discrete_latency(&to_discrete(&hard)?, &table);
        }
        let m = total / args.samples as f64;
        csv.write_record([f.to_string(), m.to_string()])?;
        formula.push(f);
        measured.push(m);
    }
    let fit = fit_line(&formula, &measured);
    let bytes = csv.into_inner().map_err(|e| anyhow!("flushing csv: {e}"))?;
    write(&args.out.join("latency_validation.csv"), &String::from_utf8(bytes).expect("csv is utf-8"))?;
    let text = to_json(&fit);
    write(&args.out.join("latency_validation.json"), &text)?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub latency_table: PathBuf,
    #[arg(long, alias = "budget", allow_negative_numbers = true)]
    pub budget_ms: f64,
    /// Also discretize with the greedy integral knapsack solver.
    #[arg(long)]
    pub exact_mckp: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ProjectOutput {
    arch: DiscreteArch,
    report: ProjectionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    greedy: Option<ProjectionReport>,
}

pub fn cmd_project(args: ProjectArgs) -> CliResult {
    let params: ArchParams = serde_json::from_str(&read(&args.params)?).context("parsing parameters")?;
    let table = load_table(&args.latency_table, None).context("loading latency table")?;
    if table.shape() != params.shape() {
        return Err(anyhow!("latency table is {}, parameters are {}", table.shape(), params.shape()).into());
    }
    let infeasible = |e: ProjectError| match e {
        ProjectError::Infeasible { latency, budget } => CliError::OverBudget { latency_ms: latency, budget_ms: budget },
        other => CliError::Input(other.into()),
    };
    let projection = project_credit(&params, &table, args.budget_ms).map_err(infeasible)?;
    let greedy = if args.exact_mckp {
        let g = project_credit_greedy(&params, &table, args.budget_ms).map_err(infeasible)?;
        Some(projection_report(&params, &table, &g))
    } else {
        None
    };
    let output = ProjectOutput {
        report: projection_report(&params, &table, &projection),
        arch: projection.arch,
        greedy,
    };
    emit(args.out.as_deref(), to_json(&output).trim_end())
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub latency_table: PathBuf,
    #[arg(long)]
    pub objective: PathBuf,
    #[arg(long, alias = "budget", default_value_t = f64::INFINITY, allow_negative_numbers = true)]
    pub budget_ms: f64,
    /// CSV of every architecture with its latency and score.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct EnumerateSummary {
    count: usize,
    feasible: usize,
    #[serde(with = "budget_repr")]
    budget_ms: f64,
    minimal_latency_ms: f64,
    best: Option<ScoredArch>,
}

pub fn cmd_enumerate(args: EnumerateArgs) -> CliResult {
    let problem = load_problem(&args.space, &args.latency_table, &args.objective)?;
    let e = enumerate(&problem.spec, &problem.table, &problem.objective, args.budget_ms)?;
    let minimal = expected_latency(&lightest_init(&problem.spec, &problem.table)?, &problem.table)?;
    if let Some(path) = &args.out {
        let mut csv = csv::Writer::from_writer(Vec::new());
        csv.write_record(["depth", "config", "latency_ms", "score"])?;
        for a in &e.archs {
            csv.write_record([
                serde_json::to_string(&a.arch.depth)?,
                serde_json::to_string(&a.arch.config)?,
                a.latency.to_string(),
                a.score.to_string(),
            ])?;
        }
        let bytes = csv.into_inner().map_err(|e| anyhow!("flushing csv: {e}"))?;
        write(path, &String::from_utf8(bytes).expect("csv is utf-8"))?;
    }
    let summary = EnumerateSummary {
        count: e.archs.len(),
        feasible: e.feasible().count(),
        budget_ms: args.budget_ms,
        minimal_latency_ms: minimal,
        best: e.best_feasible.map(|i| e.archs[i].clone()),
    };
    print!("{}", to_json(&summary));
    Ok(())
}
