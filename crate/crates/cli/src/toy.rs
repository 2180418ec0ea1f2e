use std::path::PathBuf;

use clap::Args;

use hcnas::optimizer::{gd_penalty_toy, sfw_toy, ToyTrace};
use hcnas::{SolverConfig, StepSchedule};

use crate::{resolve_seed, write, CliResult};

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Dimension of the simplex.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub d: u64,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    /// Penalty weights for the GD runs.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 10.0, 100.0])]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value = "fw4")]
    pub schedule: StepSchedule,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "hcnas-out")]
    pub out: PathBuf,
}

/// Writes `fw_vs_gd.csv`. Diverging GD runs end early and are reported on
/// stderr; they do not fail the command.
pub fn cmd_toy(args: ToyArgs) -> CliResult {
    let d = args.d as usize;
    let seed = resolve_seed(args.seed)?;
    let cfg = SolverConfig { max_iters: args.iters, schedule: args.schedule, seed, ..Default::default() };
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["method", "lambda", "iter", "objective", "constraint_residual"])?;
    let mut rows = |method: &str, lambda: Option<f64>, trace: &ToyTrace| -> csv::Result<()> {
        let lambda = lambda.map(|l| l.to_string()).unwrap_or_default();
        for r in &trace.records {
            csv.write_record([
                method,
                &lambda,
                &r.iter.to_string(),
                &r.objective.to_string(),
                &r.residual.to_string(),
            ])?;
        }
        Ok(())
    };

    let fw = sfw_toy(d, &cfg);
    rows("fw", None, &fw)?;
    let last = fw.records.last().expect("start is recorded");
    println!("fw: objective {} residual {} after {} iterations", last.objective, last.residual, last.iter);
    for &lambda in &args.lambdas {
        let gd = gd_penalty_toy(d, lambda, args.lr, args.iters, seed);
        rows("gd", Some(lambda), &gd)?;
        let last = gd.records.last().expect("start is recorded");
        if gd.diverged {
            eprintln!("gd lambda {lambda}: diverged at iteration {}", last.iter);
        } else {
            println!("gd lambda {lambda}: objective {} residual {}", last.objective, last.residual);
        }
    }
    let bytes = csv.into_inner().map_err(|e| anyhow::anyhow!("flushing csv: {e}"))?;
    write(&args.out.join("fw_vs_gd.csv"), &String::from_utf8(bytes).expect("csv is utf-8"))
}
