use std::path::PathBuf;

use clap::{Args, Subcommand, ValueEnum};

use hcnas::latency::generate_table;
use hcnas::objective::{generate_utilities, DEFAULT_BATCH_SIZE, DEFAULT_NOISE_SD};
use hcnas::{LatencyTable, ObjectiveSpec, SpaceSpec};

use crate::search::load_space;
use crate::{emit, resolve_seed, CliResult};

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(subcommand)]
    pub kind: GenKind,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum GenKind {
    /// Search space with er/k/se configuration attributes.
    Space {
        #[arg(long, default_value_t = 5)]
        stages: usize,
        #[arg(long, default_value_t = 4)]
        max_depth: usize,
        #[arg(long, default_value_t = 2)]
        min_depth: usize,
        /// Use this many attribute-free configurations instead.
        #[arg(long)]
        configs: Option<usize>,
    },
    /// Synthetic latency table for a space.
    Table {
        #[arg(long)]
        space: PathBuf,
        /// Relative amplitude of multiplicative jitter.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value = "synthetic")]
        device: String,
    },
    /// Surrogate objective with synthetic utilities for a space.
    Objective {
        #[arg(long)]
        space: PathBuf,
        #[arg(long, value_enum, default_value_t = SurrogateKind::Linear)]
        kind: SurrogateKind,
        /// Jitter on the generated utilities.
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value_t = DEFAULT_NOISE_SD)]
        noise_sd: f64,
        #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
        batch_size: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SurrogateKind {
    Linear,
    Noisy,
}

pub fn cmd_gen(args: GenArgs) -> CliResult {
    let seed = resolve_seed(args.seed)?;
    let text = match args.kind {
        GenKind::Space { stages, max_depth, min_depth, configs } => match configs {
            Some(n) => SpaceSpec::with_config_count(stages, max_depth, min_depth, n)?,
            None => SpaceSpec::demo(stages, max_depth, min_depth)?,
        }
        .to_json(),
        GenKind::Table { space, noise, device } => {
            let spec = load_space(&space)?;
            let generated = generate_table(&spec, seed, noise);
            let mut table = LatencyTable::new(spec.shape(), device, generated.values().to_vec())?;
            *table.metadata_mut() = generated.metadata().clone();
            table.to_json()
        }
        GenKind::Objective { space, kind, noise, noise_sd, batch_size } => {
            let spec = load_space(&space)?;
            let u = generate_utilities(&spec, seed, noise);
            match kind {
                SurrogateKind::Linear => ObjectiveSpec::linear(u),
                SurrogateKind::Noisy => ObjectiveSpec::noisy(u, noise_sd, batch_size),
            }
            .to_json()
        }
    };
    emit(args.out.as_deref(), &text)
}
