//! Latency tables and the bilinear latency model.
//!
//! `t[s][b][c]` is the measured latency (ms) of block `b` of stage `s` in
//! configuration `c`. A stage of depth `k` runs its first `k` blocks, so the
//! expected latency is
//!
//! ```text
//! LAT(alpha, beta) = sum_s sum_k sum_{b <= k} sum_c alpha[s][b][c] * t[s][b][c] * beta[s][k]
//!                  = alpha' * Theta * beta
//! ```
//!
//! with `Theta[(s,b,c), (s',k)] = t[s][b][c]` when `s = s'` and `b <= k`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::{ArchParams, DiscreteArch, Shape, SpaceSpec};

const TABLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LatencyError {
    #[error("cannot read latency table: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse latency table: {0}")]
    Parse(String),
    #[error("latency t[{stage}][{block}][{config}] = {value} is negative or not finite")]
    Negative { stage: usize, block: usize, config: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Per-(stage, block, config) latencies in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableDoc", into = "TableDoc")]
pub struct LatencyTable {
    shape: Shape,
    device: String,
    t: Vec<f64>,
    metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct TableDoc {
    version: u32,
    #[serde(default)]
    device: String,
    t: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, serde_json::Value>,
}

impl TryFrom<TableDoc> for LatencyTable {
    type Error = LatencyError;

    fn try_from(doc: TableDoc) -> Result<Self, LatencyError> {
        if doc.version != TABLE_FORMAT_VERSION {
            return Err(LatencyError::Parse(format!("unsupported version {}", doc.version)));
        }
        let (shape, t) = Shape::flatten3(&doc.t)
            .ok_or_else(|| LatencyError::Shape("ragged latency tensor".into()))?;
        let mut table = LatencyTable::new(shape, doc.device, t)?;
        table.metadata = doc.metadata;
        Ok(table)
    }
}

impl From<LatencyTable> for TableDoc {
    fn from(table: LatencyTable) -> Self {
        TableDoc {
            version: TABLE_FORMAT_VERSION,
            device: table.device,
            t: table.shape.nest3(&table.t),
            metadata: table.metadata,
        }
    }
}

impl LatencyTable {
    pub fn new(shape: Shape, device: impl Into<String>, t: Vec<f64>) -> Result<Self, LatencyError> {
        if t.len() != shape.alpha_len() || shape.alpha_len() == 0 {
            return Err(LatencyError::Shape(format!(
                "{} latencies for shape {shape}",
                t.len()
            )));
        }
        for s in 0..shape.stages {
            for b in 0..shape.max_depth {
                for c in 0..shape.configs {
                    let value = t[shape.alpha_index(s, b, c)];
                    if !(value >= 0.0 && value.is_finite()) {
                        return Err(LatencyError::Negative { stage: s, block: b, config: c, value });
                    }
                }
            }
        }
        Ok(LatencyTable { shape, device: device.into(), t, metadata: BTreeMap::new() })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn device(&self) -> &str {
        &self.device
    }

    pub fn metadata(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, serde_json::Value> {
        &mut self.metadata
    }

    pub fn values(&self) -> &[f64] {
        &self.t
    }

    #[inline]
    pub fn get(&self, stage: usize, block: usize, config: usize) -> f64 {
        self.t[self.shape.alpha_index(stage, block, config)]
    }

    pub fn row(&self, stage: usize, block: usize) -> &[f64] {
        let start = self.shape.alpha_index(stage, block, 0);
        &self.t[start..start + self.shape.configs]
    }

    pub fn check_against(&self, spec: &SpaceSpec) -> Result<(), LatencyError> {
        if self.shape != spec.shape() {
            return Err(LatencyError::Shape(format!(
                "table is {}, space is {}",
                self.shape,
                spec.shape()
            )));
        }
        Ok(())
    }

    /// True when every block's latencies are non-decreasing in config index.
    pub fn is_monotone(&self) -> bool {
        (0..self.shape.stages).all(|s| {
            (0..self.shape.max_depth).all(|b| self.row(s, b).windows(2).all(|w| w[0] <= w[1]))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LatencyError> {
        // Route validation failures to their own variants instead of a parse error.
        let doc: TableDoc = serde_json::from_str(text).map_err(|e| LatencyError::Parse(e.to_string()))?;
        LatencyTable::try_from(doc)
    }
}

/// Reads and validates a latency table. When `spec` is given the table must
/// match its shape.
pub fn load_table(path: impl AsRef<Path>, spec: Option<&SpaceSpec>) -> Result<LatencyTable, LatencyError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let table = LatencyTable::from_json(&text)?;
    if let Some(spec) = spec {
        table.check_against(spec)?;
    }
    if !table.is_monotone() {
        log::warn!(
            "latency table {} is not sorted by config index within every block; \
             balanced initialization assumes latency-sorted configurations",
            path.as_ref().display()
        );
    }
    Ok(table)
}

/// The `Theta` operator of the bilinear latency form.
///
/// Row `(s,b,c)` of `Theta` holds the single value `t[s][b][c]` across columns
/// `(s, b..d)` and zeros elsewhere, so the operator is stored as the
/// latency tensor itself and applied band by band.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaMatrix {
    shape: Shape,
    t: Vec<f64>,
}

pub fn build_theta(table: &LatencyTable, spec: &SpaceSpec) -> Result<ThetaMatrix, LatencyError> {
    table.check_against(spec)?;
    Ok(ThetaMatrix::from_tensor(table.shape, table.t.clone()))
}

impl ThetaMatrix {
    /// Builds the operator for any `S x d x |C|` tensor with the same prefix structure.
    pub fn from_tensor(shape: Shape, t: Vec<f64>) -> Self {
        assert_eq!(t.len(), shape.alpha_len(), "tensor length does not match {shape}");
        ThetaMatrix { shape, t }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.alpha_len()
    }

    pub fn cols(&self) -> usize {
        self.shape.beta_len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let per_stage = self.shape.max_depth * self.shape.configs;
        let (s, rest) = (row / per_stage, row % per_stage);
        let b = rest / self.shape.configs;
        let (s2, k) = (col / self.shape.max_depth, col % self.shape.max_depth);
        if s == s2 && b <= k {
            self.t[row]
        } else {
            0.0
        }
    }

    pub fn nonzero_count(&self) -> usize {
        let shape = self.shape;
        (0..shape.max_depth)
            .map(|b| (shape.max_depth - b) * shape.configs * shape.stages)
            .sum()
    }

    /// `Theta * beta`: the cost of each `(s,b,c)` entry of `alpha`, i.e.
    /// `t[s][b][c]` times the probability that block `b` is active.
    pub fn apply(&self, beta: &[f64]) -> Vec<f64> {
        let shape = self.shape;
        debug_assert_eq!(beta.len(), shape.beta_len());
        let mut out = vec![0.0; shape.alpha_len()];
        for s in 0..shape.stages {
            let mut active = 0.0;
            for b in (0..shape.max_depth).rev() {
                active += beta[shape.beta_index(s, b)];
                let start = shape.alpha_index(s, b, 0);
                for c in 0..shape.configs {
                    out[start + c] = self.t[start + c] * active;
                }
            }
        }
        out
    }

    /// `Theta' * alpha`: the cost of each depth, i.e. the expected latency of
    /// the first `k` blocks of the stage.
    pub fn apply_transpose(&self, alpha: &[f64]) -> Vec<f64> {
        let shape = self.shape;
        debug_assert_eq!(alpha.len(), shape.alpha_len());
        let mut out = vec![0.0; shape.beta_len()];
        for s in 0..shape.stages {
            let mut prefix = 0.0;
            for b in 0..shape.max_depth {
                let start = shape.alpha_index(s, b, 0);
                prefix += (0..shape.configs).map(|c| alpha[start + c] * self.t[start + c]).sum::<f64>();
                out[shape.beta_index(s, b)] = prefix;
            }
        }
        out
    }

    pub fn bilinear(&self, alpha: &[f64], beta: &[f64]) -> f64 {
        self.apply_transpose(alpha).iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    /// Dense `(S*d*|C|) x (S*d)` materialization.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.rows())
            .map(|r| (0..self.cols()).map(|c| self.get(r, c)).collect())
            .collect()
    }
}

/// Expected latency of a continuous point, summed term by term.
pub fn expected_latency(params: &ArchParams, table: &LatencyTable) -> Result<f64, LatencyError> {
    let shape = table.shape;
    if params.shape() != shape {
        return Err(LatencyError::Shape(format!(
            "params are {}, table is {shape}",
            params.shape()
        )));
    }
    let (alpha, beta) = (params.alpha(), params.beta());
    let mut total = 0.0;
    for s in 0..shape.stages {
        for k in 0..shape.max_depth {
            let depth_prob = beta[shape.beta_index(s, k)];
            if depth_prob == 0.0 {
                continue;
            }
            for b in 0..=k {
                for c in 0..shape.configs {
                    let i = shape.alpha_index(s, b, c);
                    total += alpha[i] * table.t[i] * depth_prob;
                }
            }
        }
    }
    Ok(total)
}

/// Latency of a discrete architecture: the chosen configs of every active block.
///
/// Accumulates in the same order as [`expected_latency`], so the two agree
/// bit for bit on one-hot parameters.
pub fn discrete_latency(arch: &DiscreteArch, table: &LatencyTable) -> f64 {
    let mut total = 0.0;
    for (s, configs) in arch.config.iter().enumerate() {
        for (b, &c) in configs.iter().enumerate() {
            total += table.get(s, b, c);
        }
    }
    total
}

/// Nominal relative cost of a configuration, from its `er`/`k`/`se`
/// attributes when present and from its index otherwise.
pub fn nominal_cost(spec: &SpaceSpec, config: usize) -> f64 {
    let attrs = &spec.configs[config].attrs;
    let num = |key: &str| attrs.get(key).and_then(serde_json::Value::as_f64);
    match (num("er"), num("k")) {
        (Some(er), Some(k)) => {
            let se = match attrs.get("se") {
                Some(serde_json::Value::Bool(true)) => 1.15,
                Some(serde_json::Value::String(s)) if s == "on" => 1.15,
                _ => 1.0,
            };
            er * k * k * se
        }
        _ => 1.0 + config as f64,
    }
}

/// Seeded synthetic latency table.
///
/// Latency grows with the nominal cost of a configuration and varies by stage
/// and block; `noise` is the relative amplitude of multiplicative jitter.
/// Each block row is sorted afterwards so configuration index order stays
/// latency order.
pub fn generate_table(spec: &SpaceSpec, seed: u64, noise: f64) -> LatencyTable {
    let shape = spec.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nominal: Vec<f64> = (0..shape.configs).map(|c| nominal_cost(spec, c)).collect();
    let max_nominal = nominal.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let mut t = vec![0.0; shape.alpha_len()];
    for s in 0..shape.stages {
        let stage_scale = 0.6 + 0.8 * rng.random::<f64>();
        for b in 0..shape.max_depth {
            // The first block of a stage usually changes resolution and costs more.
            let block_scale = if b == 0 { 1.4 } else { 1.0 };
            let start = shape.alpha_index(s, b, 0);
            let row = &mut t[start..start + shape.configs];
            for (c, v) in row.iter_mut().enumerate() {
                let jitter = 1.0 + noise * (2.0 * rng.random::<f64>() - 1.0);
                *v = stage_scale * block_scale * (0.3 + 2.7 * nominal[c] / max_nominal) * jitter.max(0.05);
            }
            row.sort_by(f64::total_cmp);
        }
    }
    let mut table = LatencyTable::new(shape, "synthetic", t).expect("generated table is valid");
    table.metadata.insert("seed".into(), seed.into());
    table.metadata.insert("noise".into(), noise.into());
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{from_discrete, ArchParams};

    #[test]
    fn theta_prefix_structure() {
        let spec = SpaceSpec::with_config_count(1, 2, 1, 1).unwrap();
        let table = LatencyTable::new(spec.shape(), "x", vec![5.0, 7.0]).unwrap();
        let theta = build_theta(&table, &spec).unwrap();
        assert_eq!(theta.to_dense(), vec![vec![5.0, 5.0], vec![0.0, 7.0]]);
        assert_eq!(theta.nonzero_count(), 3);
    }

    #[test]
    fn zero_table_gives_zero_theta() {
        let spec = SpaceSpec::with_config_count(2, 3, 2, 2).unwrap();
        let table = LatencyTable::new(spec.shape(), "x", vec![0.0; 12]).unwrap();
        let theta = build_theta(&table, &spec).unwrap();
        assert!(theta.to_dense().iter().flatten().all(|&v| v == 0.0));
        let p = ArchParams::uniform(&spec);
        assert_eq!(expected_latency(&p, &table).unwrap(), 0.0);
    }

    #[test]
    fn depth_two_one_hot() {
        let spec = SpaceSpec::with_config_count(1, 3, 1, 2).unwrap();
        let table = LatencyTable::new(spec.shape(), "x", vec![3.0, 9.0, 1.0, 4.0, 8.0, 8.0]).unwrap();
        let arch = DiscreteArch { depth: vec![2], config: vec![vec![0, 1]] };
        let p = from_discrete(&arch, &spec).unwrap();
        assert_eq!(expected_latency(&p, &table).unwrap(), 7.0);
        assert_eq!(discrete_latency(&arch, &table), 7.0);
    }

    #[test]
    fn uniform_alpha_two_blocks() {
        let spec = SpaceSpec::with_config_count(1, 2, 1, 2).unwrap();
        let table = LatencyTable::new(spec.shape(), "x", vec![2.0, 4.0, 2.0, 4.0]).unwrap();
        let p = ArchParams::new(spec.shape(), 1, vec![0.5; 4], vec![0.0, 1.0]).unwrap();
        assert_eq!(expected_latency(&p, &table).unwrap(), 6.0);
    }

    #[test]
    fn rejects_negative_and_ragged() {
        let neg = r#"{"version":1,"device":"d","t":[[[1.0,-2.0]]]}"#;
        assert!(matches!(LatencyTable::from_json(neg), Err(LatencyError::Negative { config: 1, .. })));
        let ragged = r#"{"version":1,"device":"d","t":[[[1.0,2.0],[1.0]]]}"#;
        assert!(matches!(LatencyTable::from_json(ragged), Err(LatencyError::Shape(_))));
        assert!(matches!(LatencyTable::from_json("{"), Err(LatencyError::Parse(_))));
    }

    #[test]
    fn generated_tables_are_sorted_and_seeded() {
        let spec = SpaceSpec::with_config_count(3, 4, 2, 5).unwrap();
        let a = generate_table(&spec, 7, 0.2);
        assert!(a.is_monotone());
        assert_eq!(a, generate_table(&spec, 7, 0.2));
        assert_ne!(a, generate_table(&spec, 8, 0.2));
    }
}
