#![allow(dead_code)]

use hcnas::latency::generate_table;
use hcnas::{ArchParams, LatencyTable, Shape, SpaceSpec};
use rand::Rng;

pub fn random_spec(rng: &mut impl Rng, max_stages: usize, max_depth: usize, max_configs: usize) -> SpaceSpec {
    let stages = rng.random_range(1..=max_stages);
    let depth = rng.random_range(1..=max_depth);
    let min_depth = rng.random_range(1..=depth);
    let configs = rng.random_range(1..=max_configs);
    SpaceSpec::with_config_count(stages, depth, min_depth, configs).unwrap()
}

pub fn random_table(rng: &mut impl Rng, spec: &SpaceSpec) -> LatencyTable {
    generate_table(spec, rng.random(), rng.random_range(0.0..0.3))
}

/// Unsorted, unstructured table with entries in `[0, 10)`.
pub fn scrambled_table(rng: &mut impl Rng, shape: Shape) -> LatencyTable {
    let t = (0..shape.alpha_len()).map(|_| 10.0 * rng.random::<f64>()).collect();
    LatencyTable::new(shape, "scrambled", t).unwrap()
}

fn random_row(rng: &mut impl Rng, row: &mut [f64], sparse: bool) {
    for v in row.iter_mut() {
        *v = if sparse && rng.random_bool(0.4) { 0.0 } else { rng.random::<f64>() + 1e-3 };
    }
    if row.iter().all(|&v| v == 0.0) {
        let i = rng.random_range(0..row.len());
        row[i] = 1.0;
    }
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= total);
}

/// Random valid parameters; with `sparse` some entries are exactly zero.
pub fn random_params(rng: &mut impl Rng, spec: &SpaceSpec, sparse: bool) -> ArchParams {
    let shape = spec.shape();
    let mut p = ArchParams::uniform(spec);
    for row in p.alpha_mut().chunks_mut(shape.configs) {
        random_row(rng, row, sparse);
    }
    let first = spec.first_depth_index();
    for row in p.beta_mut().chunks_mut(shape.max_depth) {
        random_row(rng, &mut row[first..], sparse);
    }
    p
}

/// Latency by the quadruple sum over stages, end depths, blocks and configs.
pub fn quadruple_sum(p: &ArchParams, table: &LatencyTable) -> f64 {
    let shape = p.shape();
    let mut total = 0.0;
    for s in 0..shape.stages {
        for end in 0..shape.max_depth {
            for b in 0..=end {
                for c in 0..shape.configs {
                    total += p.alpha_row(s, b)[c] * table.get(s, b, c) * p.beta_row(s)[end];
                }
            }
        }
    }
    total
}

pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
