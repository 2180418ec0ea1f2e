//! Frank-Wolfe solvers under the latency budget, plus the penalty baseline.
//!
//! [`bcsfw_search`] is block-coordinate stochastic Frank-Wolfe. Fixing one of
//! `alpha`/`beta` makes the latency `alpha' Theta beta` linear in the other,
//! so each step's feasible set is a relaxed multiple-choice knapsack polytope
//! and the linear minimization is exact ([`solve_relaxed_mckp`]). Iterates are
//! convex combinations of feasible points of that polytope and stay within
//! budget at every step.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::latency::{LatencyTable, ThetaMatrix};
use crate::lmo::{solve_relaxed_mckp, Item, LmoError, McKpInstance, Sense};
use crate::objective::{toy_objective, Objective};
use crate::space::{ArchParams, Block, Shape};
use crate::FEASIBILITY_TOL;

pub const DEFAULT_MAX_ITERS: usize = 500;
pub const FULL_GAP_EVERY: usize = 10;
pub const DIVERGENCE_THRESHOLD: f64 = 1e10;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("initial point has latency {latency} ms, above the budget {budget} ms")]
    InfeasibleInit { latency: f64, budget: f64 },
    #[error("latency table shape {table} does not match parameters {params}")]
    Shape { table: Shape, params: Shape },
    #[error(transparent)]
    Lmo(#[from] LmoError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// `4 / (t + 4)`
    FwClassic,
    /// `2 / (t + 2)`
    Fw2,
    Fixed(f64),
}

impl StepSchedule {
    pub fn step(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::FwClassic => 4.0 / (t as f64 + 4.0),
            StepSchedule::Fw2 => 2.0 / (t as f64 + 2.0),
            StepSchedule::Fixed(g) => g,
        }
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSchedule::FwClassic => f.write_str("fw4"),
            StepSchedule::Fw2 => f.write_str("fw2"),
            StepSchedule::Fixed(g) => write!(f, "fixed:{g}"),
        }
    }
}

impl FromStr for StepSchedule {
    type Err = String;

    /// Parses `fw4`, `fw2` or `fixed:<gamma>` with `gamma` in `[0, 1]`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fw4" | "fw_classic" => Ok(StepSchedule::FwClassic),
            "fw2" | "fw_2" => Ok(StepSchedule::Fw2),
            _ => {
                let g: f64 = s
                    .strip_prefix("fixed:")
                    .ok_or_else(|| format!("unknown schedule `{s}` (expected fw4, fw2 or fixed:<gamma>)"))?
                    .parse()
                    .map_err(|e| format!("bad step size in `{s}`: {e}"))?;
                if (0.0..=1.0).contains(&g) {
                    Ok(StepSchedule::Fixed(g))
                } else {
                    Err(format!("fixed step {g} is outside [0, 1]"))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockRule {
    /// Each block with probability 1/2.
    Random,
    /// `alpha` on even iterations, `beta` on odd ones.
    Alternate,
}

impl fmt::Display for BlockRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockRule::Random => "random",
            BlockRule::Alternate => "alternate",
        })
    }
}

impl FromStr for BlockRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(BlockRule::Random),
            "alternate" => Ok(BlockRule::Alternate),
            _ => Err(format!("unknown block rule `{s}` (expected random or alternate)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub schedule: StepSchedule,
    pub block_rule: BlockRule,
    pub seed: u64,
    /// Latency budget `T` in ms.
    pub budget_ms: f64,
    /// Slack allowed when checking the initial point against the budget.
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: DEFAULT_MAX_ITERS,
            schedule: StepSchedule::FwClassic,
            block_rule: BlockRule::Random,
            seed: 0,
            budget_ms: f64::INFINITY,
            tolerance: FEASIBILITY_TOL,
        }
    }
}

/// One solver iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    /// Updated block; `None` when both blocks move together (penalty baseline).
    pub block: Option<Block>,
    /// Objective estimate at the iterate before the step.
    pub objective: f64,
    /// Expected latency of the iterate after the step.
    pub latency_ms: f64,
    /// Frank-Wolfe gap of the active block before the step.
    pub fw_gap: f64,
    pub step_size: f64,
    /// Gap over both blocks, every [`FULL_GAP_EVERY`] iterations.
    pub full_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    pub budget_ms: f64,
    pub initial_latency: f64,
    pub records: Vec<IterRecord>,
    pub final_params: ArchParams,
    /// Set when the penalty baseline blew up; the trace stops there.
    pub diverged: bool,
}

impl SearchTrace {
    pub fn final_latency(&self) -> f64 {
        self.records.last().map_or(self.initial_latency, |r| r.latency_ms)
    }

    /// Largest latency over the initial point and every iterate.
    pub fn max_latency(&self) -> f64 {
        self.records.iter().map(|r| r.latency_ms).fold(self.initial_latency, f64::max)
    }

    /// CSV with header `iter,block,objective,latency_ms,fw_gap,step_size`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iter", "block", "objective", "latency_ms", "fw_gap", "step_size"])
            .expect("writing to memory");
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                r.block.map_or("joint", Block::as_str).to_string(),
                r.objective.to_string(),
                r.latency_ms.to_string(),
                r.fw_gap.to_string(),
                r.step_size.to_string(),
            ])
            .expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }
}

/// Everything about one step, handed to the observer of [`bcsfw_search_observed`].
pub struct StepView<'a> {
    pub iter: usize,
    pub block: Block,
    pub before: &'a ArchParams,
    /// LMO vertex for the active block, flat like the block itself.
    pub vertex: &'a [f64],
    pub step_size: f64,
    pub after: &'a ArchParams,
}

pub fn bcsfw_search(
    init: &ArchParams,
    objective: &dyn Objective,
    table: &LatencyTable,
    cfg: &SolverConfig,
) -> Result<SearchTrace, SearchError> {
    bcsfw_search_observed(init, objective, table, cfg, |_| {})
}

/// [`bcsfw_search`] calling `observe` after every step.
pub fn bcsfw_search_observed(
    init: &ArchParams,
    objective: &dyn Objective,
    table: &LatencyTable,
    cfg: &SolverConfig,
    mut observe: impl FnMut(StepView<'_>),
) -> Result<SearchTrace, SearchError> {
    let shape = init.shape();
    if table.shape() != shape {
        return Err(SearchError::Shape { table: table.shape(), params: shape });
    }
    if let StepSchedule::Fixed(g) = cfg.schedule {
        if !(0.0..=1.0).contains(&g) {
            return Err(SearchError::Config(format!("fixed step {g} is outside [0, 1]")));
        }
    }
    let theta = ThetaMatrix::from_tensor(shape, table.values().to_vec());
    let initial_latency = theta.bilinear(init.alpha(), init.beta());
    if initial_latency > cfg.budget_ms + cfg.tolerance {
        return Err(SearchError::InfeasibleInit { latency: initial_latency, budget: cfg.budget_ms });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init.clone();
    let mut records = Vec::with_capacity(cfg.max_iters);
    for t in 0..cfg.max_iters {
        let block = match cfg.block_rule {
            BlockRule::Random => {
                if rng.random_bool(0.5) {
                    Block::Alpha
                } else {
                    Block::Beta
                }
            }
            BlockRule::Alternate => {
                if t % 2 == 0 {
                    Block::Alpha
                } else {
                    Block::Beta
                }
            }
        };
        let sample = objective.evaluate(&params, &mut rng);
        let grad = |b: Block| match b {
            Block::Alpha => &sample.grad_alpha,
            Block::Beta => &sample.grad_beta,
        };

        let vertex = block_lmo(&params, &theta, block, grad(block), cfg.budget_ms)?;
        let fw_gap = gap(params.block(block), &vertex, grad(block));
        let full_gap = if t % FULL_GAP_EVERY == 0 {
            let other = block.other();
            let other_vertex = block_lmo(&params, &theta, other, grad(other), cfg.budget_ms)?;
            Some(fw_gap + gap(params.block(other), &other_vertex, grad(other)))
        } else {
            None
        };

        let gamma = cfg.schedule.step(t);
        let before = params.clone();
        for (x, v) in params.block_mut(block).iter_mut().zip(&vertex) {
            *x = (1.0 - gamma) * *x + gamma * v;
        }
        let latency_ms = theta.bilinear(params.alpha(), params.beta());
        records.push(IterRecord {
            iter: t,
            block: Some(block),
            objective: sample.value,
            latency_ms,
            fw_gap,
            step_size: gamma,
            full_gap,
        });
        observe(StepView { iter: t, block, before: &before, vertex: &vertex, step_size: gamma, after: &params });
    }
    Ok(SearchTrace { budget_ms: cfg.budget_ms, initial_latency, records, final_params: params, diverged: false })
}

fn gap(current: &[f64], vertex: &[f64], grad: &[f64]) -> f64 {
    current.iter().zip(vertex).zip(grad).map(|((x, v), g)| (x - v) * g).sum()
}

/// Knapsack instance for one block with the other block fixed. For `beta`
/// the groups hold only the allowed depths.
pub(crate) fn block_instance(
    params: &ArchParams,
    theta: &ThetaMatrix,
    block: Block,
    values: &[f64],
    budget: f64,
) -> McKpInstance {
    let shape = params.shape();
    match block {
        Block::Alpha => {
            let costs = theta.apply(params.beta());
            let groups = costs
                .chunks(shape.configs)
                .zip(values.chunks(shape.configs))
                .map(|(c, v)| c.iter().zip(v).map(|(&c, &v)| Item::new(v, c)).collect())
                .collect();
            McKpInstance::new(groups, budget)
        }
        Block::Beta => {
            let costs = theta.apply_transpose(params.alpha());
            let first = params.min_depth() - 1;
            let groups = (0..shape.stages)
                .map(|s| {
                    (first..shape.max_depth)
                        .map(|k| {
                            let i = shape.beta_index(s, k);
                            Item::new(values[i], costs[i])
                        })
                        .collect()
                })
                .collect();
            McKpInstance::new(groups, budget)
        }
    }
}

/// Scatters per-group weights back into a flat block.
pub(crate) fn block_from_groups(shape: Shape, min_depth: usize, block: Block, weights: &[Vec<f64>]) -> Vec<f64> {
    match block {
        Block::Alpha => weights.concat(),
        Block::Beta => {
            let mut flat = vec![0.0; shape.beta_len()];
            for (s, w) in weights.iter().enumerate() {
                let start = shape.beta_index(s, min_depth - 1);
                flat[start..start + w.len()].copy_from_slice(w);
            }
            flat
        }
    }
}

fn block_lmo(
    params: &ArchParams,
    theta: &ThetaMatrix,
    block: Block,
    grad: &[f64],
    budget: f64,
) -> Result<Vec<f64>, LmoError> {
    let inst = block_instance(params, theta, block, grad, budget);
    let point = solve_relaxed_mckp(&inst, Sense::Min)?;
    Ok(block_from_groups(params.shape(), params.min_depth(), block, &point.weights))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyRecord {
    pub iter: usize,
    pub objective: f64,
    /// `|sum(x) - 1|`
    pub residual: f64,
    /// Penalty term `lambda (sum(x) - 1)^2`; zero for Frank-Wolfe.
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrace {
    pub records: Vec<ToyRecord>,
    pub x: Vec<f64>,
    pub diverged: bool,
}

fn toy_start(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn toy_record(iter: usize, x: &[f64], lambda: f64) -> ToyRecord {
    let violation = x.iter().sum::<f64>() - 1.0;
    ToyRecord {
        iter,
        objective: toy_objective(x).0,
        residual: violation.abs(),
        penalty: lambda * violation * violation,
    }
}

/// Frank-Wolfe on `min ||x||^2 s.t. sum(x) = 1, x >= 0` from a seeded random
/// point of the simplex. Record 0 is the start; record `t` follows `t` steps.
pub fn sfw_toy(d: usize, cfg: &SolverConfig) -> ToyTrace {
    assert!(d >= 1, "dimension must be positive");
    let mut x = toy_start(d, cfg.seed);
    let mut records = vec![toy_record(0, &x, 0.0)];
    for t in 0..cfg.max_iters {
        let (_, grad) = toy_objective(&x);
        let j = grad
            .iter()
            .enumerate()
            .fold(0, |best, (i, g)| if *g < grad[best] { i } else { best });
        let gamma = cfg.schedule.step(t);
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = (1.0 - gamma) * *xi + if i == j { gamma } else { 0.0 };
        }
        records.push(toy_record(t + 1, &x, 0.0));
    }
    ToyTrace { records, x, diverged: false }
}

/// Gradient descent on `||x||^2 + lambda (sum(x) - 1)^2` from the same start
/// as [`sfw_toy`]. Stops early and sets `diverged` once the objective passes
/// [`DIVERGENCE_THRESHOLD`].
pub fn gd_penalty_toy(d: usize, lambda: f64, lr: f64, iters: usize, seed: u64) -> ToyTrace {
    assert!(d >= 1, "dimension must be positive");
    assert!(lr > 0.0, "learning rate must be positive");
    let mut x = toy_start(d, seed);
    let mut records = vec![toy_record(0, &x, lambda)];
    for t in 0..iters {
        let violation = x.iter().sum::<f64>() - 1.0;
        for xi in x.iter_mut() {
            *xi -= lr * (2.0 * *xi + 2.0 * lambda * violation);
        }
        let r = toy_record(t + 1, &x, lambda);
        records.push(r);
        if (r.objective + r.penalty).is_nan() || r.objective + r.penalty > DIVERGENCE_THRESHOLD {
            return ToyTrace { records, x, diverged: true };
        }
    }
    ToyTrace { records, x, diverged: false }
}

/// Softmax logits per row; disallowed depths are excluded, not merely small.
struct Logits {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

const LOG_FLOOR: f64 = 1e-12;

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// `p_i (g_i - p.g)`, the gradient through a softmax row.
fn softmax_backward(p: &[f64], g: &[f64], out: &mut [f64]) {
    let mean: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, pi), gi) in out.iter_mut().zip(p).zip(g) {
        *o = pi * (gi - mean);
    }
}

/// Gradient descent on softmax logits for
/// `objective + lambda * max(0, LAT - T)^2`. The baseline the Frank-Wolfe
/// search is compared with; nothing keeps its iterates within budget.
pub fn gd_penalty_search(
    init: &ArchParams,
    objective: &dyn Objective,
    table: &LatencyTable,
    lambda: f64,
    lr: f64,
    cfg: &SolverConfig,
) -> Result<SearchTrace, SearchError> {
    let shape = init.shape();
    if table.shape() != shape {
        return Err(SearchError::Shape { table: table.shape(), params: shape });
    }
    let theta = ThetaMatrix::from_tensor(shape, table.values().to_vec());
    let first = init.min_depth() - 1;
    let (c, d) = (shape.configs, shape.max_depth);
    let mut logits = Logits {
        alpha: init.alpha().iter().map(|p| p.max(LOG_FLOOR).ln()).collect(),
        beta: init.beta().iter().map(|p| p.max(LOG_FLOOR).ln()).collect(),
    };
    let mut params = init.clone();
    let project = |logits: &Logits, params: &mut ArchParams| {
        for (l, p) in logits.alpha.chunks(c).zip(params.alpha_mut().chunks_mut(c)) {
            softmax_into(l, p);
        }
        for (l, p) in logits.beta.chunks(d).zip(params.beta_mut().chunks_mut(d)) {
            p[..first].iter_mut().for_each(|v| *v = 0.0);
            softmax_into(&l[first..], &mut p[first..]);
        }
    };
    project(&logits, &mut params);
    let initial_latency = theta.bilinear(params.alpha(), params.beta());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.max_iters);
    let mut diverged = false;
    let mut g_logit_a = vec![0.0; shape.alpha_len()];
    let mut g_logit_b = vec![0.0; shape.beta_len()];
    for t in 0..cfg.max_iters {
        let sample = objective.evaluate(&params, &mut rng);
        let latency = theta.bilinear(params.alpha(), params.beta());
        let excess = (latency - cfg.budget_ms).max(0.0);
        let scale = 2.0 * lambda * excess;
        let ga: Vec<f64> = theta
            .apply(params.beta())
            .iter()
            .zip(&sample.grad_alpha)
            .map(|(l, g)| g + scale * l)
            .collect();
        let gb: Vec<f64> = theta
            .apply_transpose(params.alpha())
            .iter()
            .zip(&sample.grad_beta)
            .map(|(l, g)| g + scale * l)
            .collect();
        for ((p, g), o) in params.alpha().chunks(c).zip(ga.chunks(c)).zip(g_logit_a.chunks_mut(c)) {
            softmax_backward(p, g, o);
        }
        for ((p, g), o) in params.beta().chunks(d).zip(gb.chunks(d)).zip(g_logit_b.chunks_mut(d)) {
            softmax_backward(&p[first..], &g[first..], &mut o[first..]);
        }
        logits.alpha.iter_mut().zip(&g_logit_a).for_each(|(l, g)| *l -= lr * g);
        logits.beta.iter_mut().zip(&g_logit_b).for_each(|(l, g)| *l -= lr * g);
        project(&logits, &mut params);

        let value = sample.value + lambda * excess * excess;
        let latency_ms = theta.bilinear(params.alpha(), params.beta());
        records.push(IterRecord {
            iter: t,
            block: None,
            objective: value,
            latency_ms,
            fw_gap: f64::NAN,
            step_size: lr,
            full_gap: None,
        });
        if value.is_nan() || value.abs() > DIVERGENCE_THRESHOLD || !latency_ms.is_finite() {
            diverged = true;
            break;
        }
    }
    Ok(SearchTrace { budget_ms: cfg.budget_ms, initial_latency, records, final_params: params, diverged })
}
