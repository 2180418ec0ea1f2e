//! Search-space definition and its continuous relaxation.
//!
//! A network has `stages` stages, each with up to `max_depth` blocks. Every
//! block picks one configuration out of `configs`, and every stage picks a
//! depth in `min_depth..=max_depth`. The relaxation replaces each choice with
//! a probability row: `alpha[s][b]` over configurations and `beta[s]` over
//! depths. Depth `k` is stored at `beta[s][k - 1]`.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigUint;
use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for row sums and one-hot checks.
pub const ROW_TOL: f64 = 1e-9;

const SPACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("invalid space: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invariant violated: {0}")]
    Invariant(Violation),
    #[error("not discrete: {0} is not one-hot")]
    NotDiscrete(Row),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("degenerate row {0}: all probabilities are zero")]
    DegenerateRow(Row),
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("unsupported space format version {0}")]
    Version(u32),
}

/// Identifies one probability row of [`ArchParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Row {
    Alpha { stage: usize, block: usize },
    Beta { stage: usize },
}

impl fmt::Display for Row {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Row::Alpha { stage, block } => write!(f, "alpha[{stage}][{block}]"),
            Row::Beta { stage } => write!(f, "beta[{stage}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite { row: Row, index: usize },
    Negative { row: Row, index: usize, value: f64 },
    RowSum { row: Row, sum: f64 },
    MinDepth { stage: usize, depth: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite { row, index } => write!(f, "{row}[{index}] is not finite"),
            Violation::Negative { row, index, value } => {
                write!(f, "{row}[{index}] = {value} is negative")
            }
            Violation::RowSum { row, sum } => write!(f, "row sum of {row} is {sum}, expected 1"),
            Violation::MinDepth { stage, depth, value } => write!(
                f,
                "min depth: beta[{stage}] puts {value} on depth {depth}, below the minimum"
            ),
        }
    }
}

/// Coordinate block of the architecture parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Alpha,
    Beta,
}

impl Block {
    pub fn as_str(self) -> &'static str {
        match self {
            Block::Alpha => "alpha",
            Block::Beta => "beta",
        }
    }

    pub fn other(self) -> Block {
        match self {
            Block::Alpha => Block::Beta,
            Block::Beta => Block::Alpha,
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tensor dimensions shared by parameters, latency tables and utilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub stages: usize,
    pub max_depth: usize,
    pub configs: usize,
}

impl Shape {
    pub fn new(stages: usize, max_depth: usize, configs: usize) -> Self {
        Shape { stages, max_depth, configs }
    }

    /// Number of entries in an `S x d x |C|` tensor.
    pub fn alpha_len(&self) -> usize {
        self.stages * self.max_depth * self.configs
    }

    /// Number of entries in an `S x d` tensor.
    pub fn beta_len(&self) -> usize {
        self.stages * self.max_depth
    }

    #[inline]
    pub fn alpha_index(&self, stage: usize, block: usize, config: usize) -> usize {
        (stage * self.max_depth + block) * self.configs + config
    }

    #[inline]
    pub fn beta_index(&self, stage: usize, block: usize) -> usize {
        stage * self.max_depth + block
    }

    pub(crate) fn nest3(&self, flat: &[f64]) -> Vec<Vec<Vec<f64>>> {
        flat.chunks(self.max_depth * self.configs)
            .map(|stage| stage.chunks(self.configs).map(<[f64]>::to_vec).collect())
            .collect()
    }

    pub(crate) fn nest2(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        flat.chunks(self.max_depth).map(<[f64]>::to_vec).collect()
    }

    /// Flattens a `[S][d][|C|]` nested array, returning `None` on ragged input.
    pub(crate) fn flatten3(nested: &[Vec<Vec<f64>>]) -> Option<(Shape, Vec<f64>)> {
        let stages = nested.len();
        let max_depth = nested.first().map_or(0, Vec::len);
        let configs = nested.first().and_then(|s| s.first()).map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(stages * max_depth * configs);
        for stage in nested {
            if stage.len() != max_depth {
                return None;
            }
            for row in stage {
                if row.len() != configs {
                    return None;
                }
                flat.extend_from_slice(row);
            }
        }
        Some((Shape::new(stages, max_depth, configs), flat))
    }

    pub(crate) fn flatten2(nested: &[Vec<f64>]) -> Option<(usize, usize, Vec<f64>)> {
        let rows = nested.len();
        let cols = nested.first().map_or(0, Vec::len);
        if nested.iter().any(|r| r.len() != cols) {
            return None;
        }
        Some((rows, cols, nested.concat()))
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.stages, self.max_depth, self.configs)
    }
}

/// A block configuration. Attributes such as expansion ratio or kernel size
/// are carried along for reporting; the solver never looks at them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigLabel {
    pub id: usize,
    #[serde(default)]
    pub attrs: BTreeMap<String, serde_json::Value>,
}

impl ConfigLabel {
    pub fn new(id: usize) -> Self {
        ConfigLabel { id, attrs: BTreeMap::new() }
    }
}

/// Dimensions of the search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceDoc", into = "SpaceDoc")]
pub struct SpaceSpec {
    pub num_stages: usize,
    pub max_depth: usize,
    pub min_depth: usize,
    pub configs: Vec<ConfigLabel>,
}

#[derive(Serialize, Deserialize)]
struct SpaceDoc {
    version: u32,
    stages: usize,
    max_depth: usize,
    #[serde(default = "default_min_depth")]
    min_depth: usize,
    configs: Vec<ConfigLabel>,
}

fn default_min_depth() -> usize {
    2
}

impl TryFrom<SpaceDoc> for SpaceSpec {
    type Error = SpaceError;

    fn try_from(doc: SpaceDoc) -> Result<Self, SpaceError> {
        if doc.version != SPACE_FORMAT_VERSION {
            return Err(SpaceError::Version(doc.version));
        }
        SpaceSpec::new(doc.stages, doc.max_depth, doc.min_depth, doc.configs)
    }
}

impl From<SpaceSpec> for SpaceDoc {
    fn from(spec: SpaceSpec) -> Self {
        SpaceDoc {
            version: SPACE_FORMAT_VERSION,
            stages: spec.num_stages,
            max_depth: spec.max_depth,
            min_depth: spec.min_depth,
            configs: spec.configs,
        }
    }
}

impl SpaceSpec {
    pub fn new(
        num_stages: usize,
        max_depth: usize,
        min_depth: usize,
        configs: Vec<ConfigLabel>,
    ) -> Result<Self, SpaceError> {
        let spec = SpaceSpec { num_stages, max_depth, min_depth, configs };
        spec.check()?;
        Ok(spec)
    }

    /// A space whose configurations carry no attributes.
    pub fn with_config_count(
        num_stages: usize,
        max_depth: usize,
        min_depth: usize,
        num_configs: usize,
    ) -> Result<Self, SpaceError> {
        SpaceSpec::new(num_stages, max_depth, min_depth, (0..num_configs).map(ConfigLabel::new).collect())
    }

    /// Mobile-style space: expansion ratio {3, 4, 6} x kernel {3, 5} x
    /// squeeze-excite {off, on}, ordered by nominal cost `er * k^2` (x1.15 with
    /// squeeze-excite), cheapest first.
    pub fn demo(num_stages: usize, max_depth: usize, min_depth: usize) -> Result<Self, SpaceError> {
        let mut triples = Vec::new();
        for er in [3u32, 4, 6] {
            for k in [3u32, 5] {
                for se in [false, true] {
                    let cost = f64::from(er * k * k) * if se { 1.15 } else { 1.0 };
                    triples.push((cost, er, k, se));
                }
            }
        }
        triples.sort_by(|a, b| a.0.total_cmp(&b.0));
        let configs = triples
            .into_iter()
            .enumerate()
            .map(|(id, (_, er, k, se))| {
                let mut label = ConfigLabel::new(id);
                label.attrs.insert("er".into(), er.into());
                label.attrs.insert("k".into(), k.into());
                label.attrs.insert("se".into(), if se { "on" } else { "off" }.into());
                label
            })
            .collect();
        SpaceSpec::new(num_stages, max_depth, min_depth, configs)
    }

    pub fn check(&self) -> Result<(), SpaceError> {
        if self.num_stages == 0 {
            return Err(SpaceError::InvalidSpec("at least one stage is required".into()));
        }
        if self.min_depth == 0 || self.min_depth > self.max_depth {
            return Err(SpaceError::InvalidSpec(format!(
                "need 1 <= min_depth <= max_depth, got min_depth={} max_depth={}",
                self.min_depth, self.max_depth
            )));
        }
        if self.configs.is_empty() {
            return Err(SpaceError::InvalidSpec("configuration set is empty".into()));
        }
        for (pos, cfg) in self.configs.iter().enumerate() {
            if cfg.id != pos {
                return Err(SpaceError::InvalidSpec(format!(
                    "config at position {pos} has id {}",
                    cfg.id
                )));
            }
        }
        Ok(())
    }

    pub fn num_configs(&self) -> usize {
        self.configs.len()
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.num_stages, self.max_depth, self.configs.len())
    }

    /// Index of the shallowest allowed depth inside a `beta` row.
    pub fn first_depth_index(&self) -> usize {
        self.min_depth - 1
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("space serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Continuous architecture parameters: a product of simplices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsDoc", into = "ParamsDoc")]
pub struct ArchParams {
    shape: Shape,
    min_depth: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    min_depth: usize,
    alpha: Vec<Vec<Vec<f64>>>,
    beta: Vec<Vec<f64>>,
}

impl TryFrom<ParamsDoc> for ArchParams {
    type Error = SpaceError;

    fn try_from(doc: ParamsDoc) -> Result<Self, SpaceError> {
        let (shape, alpha) = Shape::flatten3(&doc.alpha)
            .ok_or_else(|| SpaceError::Shape("ragged alpha tensor".into()))?;
        let (rows, cols, beta) = Shape::flatten2(&doc.beta)
            .ok_or_else(|| SpaceError::Shape("ragged beta tensor".into()))?;
        if rows != shape.stages || cols != shape.max_depth {
            return Err(SpaceError::Shape(format!(
                "beta is {rows}x{cols}, alpha is {shape}"
            )));
        }
        ArchParams::new(shape, doc.min_depth, alpha, beta)
    }
}

impl From<ArchParams> for ParamsDoc {
    fn from(p: ArchParams) -> Self {
        ParamsDoc {
            min_depth: p.min_depth,
            alpha: p.shape.nest3(&p.alpha),
            beta: p.shape.nest2(&p.beta),
        }
    }
}

impl ArchParams {
    /// Wraps raw tensors. Only lengths are checked here; see [`validate`].
    pub fn new(
        shape: Shape,
        min_depth: usize,
        alpha: Vec<f64>,
        beta: Vec<f64>,
    ) -> Result<Self, SpaceError> {
        if alpha.len() != shape.alpha_len() {
            return Err(SpaceError::Shape(format!(
                "alpha has {} entries, shape {shape} needs {}",
                alpha.len(),
                shape.alpha_len()
            )));
        }
        if beta.len() != shape.beta_len() {
            return Err(SpaceError::Shape(format!(
                "beta has {} entries, shape {shape} needs {}",
                beta.len(),
                shape.beta_len()
            )));
        }
        if min_depth == 0 || min_depth > shape.max_depth {
            return Err(SpaceError::Shape(format!(
                "min_depth {min_depth} outside 1..={}",
                shape.max_depth
            )));
        }
        Ok(ArchParams { shape, min_depth, alpha, beta })
    }

    /// Every row uniform over its allowed entries.
    pub fn uniform(spec: &SpaceSpec) -> Self {
        let shape = spec.shape();
        let alpha = vec![1.0 / shape.configs as f64; shape.alpha_len()];
        let allowed = (spec.max_depth - spec.min_depth + 1) as f64;
        let mut beta = vec![0.0; shape.beta_len()];
        for s in 0..shape.stages {
            for b in spec.first_depth_index()..shape.max_depth {
                beta[shape.beta_index(s, b)] = 1.0 / allowed;
            }
        }
        ArchParams { shape, min_depth: spec.min_depth, alpha, beta }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn min_depth(&self) -> usize {
        self.min_depth
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_mut(&mut self) -> &mut [f64] {
        &mut self.alpha
    }

    pub fn beta_mut(&mut self) -> &mut [f64] {
        &mut self.beta
    }

    pub fn block(&self, block: Block) -> &[f64] {
        match block {
            Block::Alpha => &self.alpha,
            Block::Beta => &self.beta,
        }
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        match block {
            Block::Alpha => &mut self.alpha,
            Block::Beta => &mut self.beta,
        }
    }

    pub fn alpha_row(&self, stage: usize, block: usize) -> &[f64] {
        let start = self.shape.alpha_index(stage, block, 0);
        &self.alpha[start..start + self.shape.configs]
    }

    pub fn beta_row(&self, stage: usize) -> &[f64] {
        let start = self.shape.beta_index(stage, 0);
        &self.beta[start..start + self.shape.max_depth]
    }

    /// True when the parameters were built for `spec`'s dimensions.
    pub fn matches(&self, spec: &SpaceSpec) -> bool {
        self.shape == spec.shape() && self.min_depth == spec.min_depth
    }

    fn rows(&self) -> impl Iterator<Item = (Row, &[f64])> + '_ {
        let shape = self.shape;
        let alpha_rows = (0..shape.stages).flat_map(move |s| {
            (0..shape.max_depth).map(move |b| (Row::Alpha { stage: s, block: b }, self.alpha_row(s, b)))
        });
        let beta_rows = (0..shape.stages).map(move |s| (Row::Beta { stage: s }, self.beta_row(s)));
        alpha_rows.chain(beta_rows)
    }
}

/// A fully discrete architecture. `config[s]` has exactly `depth[s]` entries,
/// one configuration id per active block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DiscreteArch {
    pub depth: Vec<usize>,
    pub config: Vec<Vec<usize>>,
}

impl DiscreteArch {
    pub fn check(&self, spec: &SpaceSpec) -> Result<(), SpaceError> {
        if self.depth.len() != spec.num_stages || self.config.len() != spec.num_stages {
            return Err(SpaceError::InvalidArch(format!(
                "expected {} stages, got {} depths and {} config lists",
                spec.num_stages,
                self.depth.len(),
                self.config.len()
            )));
        }
        for (s, (&depth, configs)) in self.depth.iter().zip(&self.config).enumerate() {
            if depth < spec.min_depth || depth > spec.max_depth {
                return Err(SpaceError::InvalidArch(format!(
                    "stage {s} depth {depth} outside [{}, {}]",
                    spec.min_depth, spec.max_depth
                )));
            }
            if configs.len() != depth {
                return Err(SpaceError::InvalidArch(format!(
                    "stage {s} has depth {depth} but {} configs",
                    configs.len()
                )));
            }
            if let Some(&bad) = configs.iter().find(|&&c| c >= spec.num_configs()) {
                return Err(SpaceError::InvalidArch(format!(
                    "stage {s} uses config {bad}, only {} exist",
                    spec.num_configs()
                )));
            }
        }
        Ok(())
    }
}

/// Sampling mode for [`gumbel_sample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Soft,
    Hard,
}

/// One Gumbel-Softmax draw. Its rows live on the simplex (soft) or are one-hot (hard).
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample {
    pub point: ArchParams,
}

impl GumbelSample {
    pub fn alpha_hat(&self) -> &[f64] {
        self.point.alpha()
    }

    pub fn beta_hat(&self) -> &[f64] {
        self.point.beta()
    }
}

/// Checks that `params` lies in the relaxed search space of `spec`.
pub fn validate(params: &ArchParams, spec: &SpaceSpec) -> Result<(), SpaceError> {
    if params.shape != spec.shape() {
        return Err(SpaceError::Shape(format!(
            "params are {}, space is {}",
            params.shape,
            spec.shape()
        )));
    }
    if params.min_depth != spec.min_depth {
        return Err(SpaceError::Shape(format!(
            "params use min_depth {}, space uses {}",
            params.min_depth, spec.min_depth
        )));
    }
    for (row, values) in params.rows() {
        for (index, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(SpaceError::Invariant(Violation::NonFinite { row, index }));
            }
            if v < 0.0 {
                return Err(SpaceError::Invariant(Violation::Negative { row, index, value: v }));
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > ROW_TOL {
            return Err(SpaceError::Invariant(Violation::RowSum { row, sum }));
        }
    }
    for s in 0..spec.num_stages {
        for (b, &v) in params.beta_row(s)[..spec.first_depth_index()].iter().enumerate() {
            if v != 0.0 {
                return Err(SpaceError::Invariant(Violation::MinDepth {
                    stage: s,
                    depth: b + 1,
                    value: v,
                }));
            }
        }
    }
    Ok(())
}

/// Exact number of discrete architectures: `(sum_{b=min..=max} |C|^b)^S`.
pub fn count_space(spec: &SpaceSpec) -> BigUint {
    let configs = BigUint::from(spec.num_configs());
    let per_stage: BigUint = (spec.min_depth..=spec.max_depth)
        .map(|b| configs.pow(b as u32))
        .sum();
    per_stage.pow(spec.num_stages as u32)
}

/// Draws a Gumbel-Softmax sample.
///
/// Each row becomes `softmax((ln p + g) / temperature)` with independent
/// `g = -ln(-ln U)`, `U ~ Uniform(0, 1)`. Entries with `p = 0` get `ln p = -inf`
/// and therefore no mass. Hard mode returns the one-hot argmax of the soft row.
/// One uniform is drawn per entry, zero or not, so the random stream consumed
/// depends only on the shape.
pub fn gumbel_sample<R: Rng + ?Sized>(
    params: &ArchParams,
    temperature: f64,
    mode: SampleMode,
    rng: &mut R,
) -> Result<GumbelSample, SpaceError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(SpaceError::Temperature(temperature));
    }
    let shape = params.shape;
    let mut alpha = vec![0.0; shape.alpha_len()];
    let mut beta = vec![0.0; shape.beta_len()];
    for s in 0..shape.stages {
        for b in 0..shape.max_depth {
            let start = shape.alpha_index(s, b, 0);
            let out = &mut alpha[start..start + shape.configs];
            gumbel_row(params.alpha_row(s, b), temperature, mode, rng, out)
                .map_err(|()| SpaceError::DegenerateRow(Row::Alpha { stage: s, block: b }))?;
        }
    }
    for s in 0..shape.stages {
        let start = shape.beta_index(s, 0);
        let out = &mut beta[start..start + shape.max_depth];
        gumbel_row(params.beta_row(s), temperature, mode, rng, out)
            .map_err(|()| SpaceError::DegenerateRow(Row::Beta { stage: s }))?;
    }
    Ok(GumbelSample {
        point: ArchParams { shape, min_depth: params.min_depth, alpha, beta },
    })
}

fn gumbel_row<R: Rng + ?Sized>(
    probs: &[f64],
    temperature: f64,
    mode: SampleMode,
    rng: &mut R,
    out: &mut [f64],
) -> Result<(), ()> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&p, o)) in probs.iter().zip(out.iter_mut()).enumerate() {
        let u: f64 = rng.sample(Open01);
        let g = -(-u.ln()).ln();
        if p > 0.0 {
            let z = (p.ln() + g) / temperature;
            *o = z;
            if best.is_none_or(|(_, zb)| z > zb) {
                best = Some((i, z));
            }
        } else {
            *o = f64::NEG_INFINITY;
        }
    }
    let (argmax, zmax) = best.ok_or(())?;
    match mode {
        SampleMode::Hard => {
            out.iter_mut().for_each(|o| *o = 0.0);
            out[argmax] = 1.0;
        }
        SampleMode::Soft => {
            let mut total = 0.0;
            for o in out.iter_mut() {
                *o = if *o == f64::NEG_INFINITY { 0.0 } else { (*o - zmax).exp() };
                total += *o;
            }
            out.iter_mut().for_each(|o| *o /= total);
        }
    }
    Ok(())
}

fn one_hot_index(row: &[f64]) -> Option<usize> {
    let mut hot = None;
    for (i, &v) in row.iter().enumerate() {
        if (v - 1.0).abs() <= ROW_TOL {
            if hot.is_some() {
                return None;
            }
            hot = Some(i);
        } else if v.abs() > ROW_TOL {
            return None;
        }
    }
    hot
}

/// Reads off the discrete architecture from parameters whose rows are all one-hot.
pub fn to_discrete(params: &ArchParams) -> Result<DiscreteArch, SpaceError> {
    let shape = params.shape;
    let mut depth = Vec::with_capacity(shape.stages);
    let mut config = Vec::with_capacity(shape.stages);
    for s in 0..shape.stages {
        let d = one_hot_index(params.beta_row(s))
            .ok_or(SpaceError::NotDiscrete(Row::Beta { stage: s }))?
            + 1;
        let mut chosen = Vec::with_capacity(d);
        for b in 0..shape.max_depth {
            let c = one_hot_index(params.alpha_row(s, b))
                .ok_or(SpaceError::NotDiscrete(Row::Alpha { stage: s, block: b }))?;
            if b < d {
                chosen.push(c);
            }
        }
        depth.push(d);
        config.push(chosen);
    }
    Ok(DiscreteArch { depth, config })
}

/// One-hot parameters for `arch`. Blocks past a stage's depth take config 0.
pub fn from_discrete(arch: &DiscreteArch, spec: &SpaceSpec) -> Result<ArchParams, SpaceError> {
    arch.check(spec)?;
    let shape = spec.shape();
    let mut alpha = vec![0.0; shape.alpha_len()];
    let mut beta = vec![0.0; shape.beta_len()];
    for s in 0..shape.stages {
        beta[shape.beta_index(s, arch.depth[s] - 1)] = 1.0;
        for b in 0..shape.max_depth {
            let c = arch.config[s].get(b).copied().unwrap_or(0);
            alpha[shape.alpha_index(s, b, c)] = 1.0;
        }
    }
    Ok(ArchParams { shape, min_depth: spec.min_depth, alpha, beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> SpaceSpec {
        SpaceSpec::with_config_count(2, 3, 2, 3).unwrap()
    }

    #[test]
    fn demo_space_is_cost_sorted() {
        let spec = SpaceSpec::demo(5, 4, 2).unwrap();
        assert_eq!(spec.num_configs(), 12);
        let costs: Vec<f64> = (0..12).map(|c| crate::latency::nominal_cost(&spec, c)).collect();
        assert!(costs.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(SpaceSpec::from_json(&spec.to_json()).unwrap(), spec);
    }

    #[test]
    fn uniform_point_is_valid() {
        let spec = small();
        validate(&ArchParams::uniform(&spec), &spec).unwrap();
    }

    #[test]
    fn short_row_sum_is_rejected() {
        let spec = small();
        let mut p = ArchParams::uniform(&spec);
        p.alpha_mut()[0] -= 0.1;
        match validate(&p, &spec) {
            Err(SpaceError::Invariant(Violation::RowSum { row, sum })) => {
                assert_eq!(row, Row::Alpha { stage: 0, block: 0 });
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mass_below_min_depth_is_rejected() {
        let spec = small();
        let mut p = ArchParams::uniform(&spec);
        let beta = p.beta_mut();
        beta[0] = 0.5;
        beta[1] = 0.5;
        beta[2] = 0.0;
        assert!(matches!(
            validate(&p, &spec),
            Err(SpaceError::Invariant(Violation::MinDepth { stage: 0, depth: 1, .. }))
        ));
    }

    #[test]
    fn shape_mismatch_is_distinct() {
        let spec = small();
        let other = SpaceSpec::with_config_count(2, 3, 2, 4).unwrap();
        let err = validate(&ArchParams::uniform(&other), &spec).unwrap_err();
        assert!(matches!(err, SpaceError::Shape(_)));
    }

    #[test]
    fn spec_rejects_bad_depths_and_ids() {
        assert!(SpaceSpec::with_config_count(1, 2, 3, 1).is_err());
        assert!(SpaceSpec::with_config_count(1, 2, 0, 1).is_err());
        assert!(SpaceSpec::with_config_count(1, 2, 1, 0).is_err());
        let dup = vec![ConfigLabel::new(0), ConfigLabel::new(0)];
        assert!(SpaceSpec::new(1, 2, 1, dup).is_err());
    }

    #[test]
    fn count_small_spaces() {
        let one = SpaceSpec::with_config_count(1, 2, 1, 1).unwrap();
        assert_eq!(count_space(&one), BigUint::from(2u32));
        assert_eq!(count_space(&small()), BigUint::from(1296u32));
    }

    #[test]
    fn one_hot_rows_sample_to_themselves() {
        let spec = small();
        let arch = DiscreteArch { depth: vec![2, 3], config: vec![vec![1, 2], vec![0, 0, 2]] };
        let p = from_discrete(&arch, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &t in &[0.1, 1.0, 10.0] {
            for mode in [SampleMode::Soft, SampleMode::Hard] {
                let g = gumbel_sample(&p, t, mode, &mut rng).unwrap();
                assert_eq!(g.point, p);
            }
        }
    }

    #[test]
    fn all_zero_row_is_degenerate() {
        let spec = small();
        let mut p = ArchParams::uniform(&spec);
        p.alpha_mut()[..3].iter_mut().for_each(|v| *v = 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = gumbel_sample(&p, 1.0, SampleMode::Soft, &mut rng).unwrap_err();
        assert_eq!(err, SpaceError::DegenerateRow(Row::Alpha { stage: 0, block: 0 }));
    }

    #[test]
    fn bad_temperature() {
        let spec = small();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ArchParams::uniform(&spec);
        assert!(gumbel_sample(&p, 0.0, SampleMode::Soft, &mut rng).is_err());
        assert!(gumbel_sample(&p, f64::NAN, SampleMode::Soft, &mut rng).is_err());
    }

    #[test]
    fn low_temperature_soft_matches_hard() {
        let spec = small();
        let p = ArchParams::uniform(&spec);
        for seed in 0..20 {
            let hard = gumbel_sample(&p, 1.0, SampleMode::Hard, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let soft = gumbel_sample(&p, 1e-4, SampleMode::Soft, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for (h, s) in hard.alpha_hat().iter().zip(soft.alpha_hat()) {
                assert!((h - s).abs() < 1e-6);
            }
            for (h, s) in hard.beta_hat().iter().zip(soft.beta_hat()) {
                assert!((h - s).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn not_discrete_names_the_row() {
        let spec = small();
        let p = ArchParams::uniform(&spec);
        assert_eq!(
            to_discrete(&p).unwrap_err(),
            SpaceError::NotDiscrete(Row::Beta { stage: 0 })
        );
    }

    #[test]
    fn from_discrete_rejects_bad_depth() {
        let spec = small();
        let arch = DiscreteArch { depth: vec![1, 2], config: vec![vec![0], vec![0, 0]] };
        assert!(from_discrete(&arch, &spec).is_err());
    }

    #[test]
    fn json_round_trip() {
        let spec = small();
        let back = SpaceSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
        let text = r#"{"version":2,"stages":1,"max_depth":1,"min_depth":1,"configs":[{"id":0}]}"#;
        assert!(SpaceSpec::from_json(text).is_err());

        let p = ArchParams::uniform(&spec);
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<ArchParams>(&text).unwrap(), p);
    }
}
