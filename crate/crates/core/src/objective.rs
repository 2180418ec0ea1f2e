//! Differentiable objectives that stand in for the validation loss of a
//! trained one-shot model.
//!
//! The solver always minimizes, so the surrogates return negated scores.
//! Utilities share the depth-prefix structure of the latency model: block `b`
//! of stage `s` contributes `u_alpha[s][b][c]` only when the stage is at least
//! `b + 1` deep, and depth `k` adds `u_beta[s][k - 1]`. The expected score is
//! therefore `alpha' * U * beta + u_beta' * beta` with `U` built exactly like
//! `Theta`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latency::{nominal_cost, ThetaMatrix};
use crate::lmo::argmax_lowest;
use crate::space::{gumbel_sample, ArchParams, DiscreteArch, SampleMode, Shape, SpaceSpec};

pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_NOISE_SD: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("invalid objective: {0}")]
    Invalid(String),
    #[error("cannot parse objective: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// `||alpha||^2 + ||beta||^2`, the quadratic toy lifted to architecture parameters.
    ToyQuadratic,
    /// Exact negated expected score.
    LinearSurrogate,
    /// Monte-Carlo estimate from hard Gumbel samples plus Gaussian noise.
    NoisySurrogate,
}

/// Per-choice utilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Utilities {
    shape: Shape,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl Utilities {
    pub fn new(shape: Shape, alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self, ObjectiveError> {
        if alpha.len() != shape.alpha_len() || beta.len() != shape.beta_len() {
            return Err(ObjectiveError::Invalid(format!("utility tensors do not match shape {shape}")));
        }
        if alpha.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(ObjectiveError::Invalid("utilities must be finite".into()));
        }
        Ok(Utilities { shape, alpha, beta })
    }

    pub fn zeros(shape: Shape) -> Self {
        Utilities { shape, alpha: vec![0.0; shape.alpha_len()], beta: vec![0.0; shape.beta_len()] }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObjectiveDoc", into = "ObjectiveDoc")]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub utilities: Option<Utilities>,
    pub noise_sd: f64,
    pub batch_size: usize,
    /// Gumbel-Softmax temperature for the soft relaxation.
    pub temperature: f64,
}

#[derive(Serialize, Deserialize)]
struct ObjectiveDoc {
    kind: ObjectiveKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    u_alpha: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    u_beta: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    noise_sd: f64,
    #[serde(default = "default_batch")]
    batch_size: usize,
    #[serde(default = "default_temperature")]
    temperature: f64,
}

fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}

fn default_temperature() -> f64 {
    1.0
}

impl TryFrom<ObjectiveDoc> for ObjectiveSpec {
    type Error = ObjectiveError;

    fn try_from(doc: ObjectiveDoc) -> Result<Self, ObjectiveError> {
        let utilities = match (doc.u_alpha, doc.u_beta) {
            (Some(ua), Some(ub)) => {
                let (shape, alpha) = Shape::flatten3(&ua)
                    .ok_or_else(|| ObjectiveError::Invalid("ragged u_alpha".into()))?;
                let (_, _, beta) =
                    Shape::flatten2(&ub).ok_or_else(|| ObjectiveError::Invalid("ragged u_beta".into()))?;
                Some(Utilities::new(shape, alpha, beta)?)
            }
            (None, None) => None,
            _ => return Err(ObjectiveError::Invalid("u_alpha and u_beta must be given together".into())),
        };
        ObjectiveSpec::new(doc.kind, utilities, doc.noise_sd, doc.batch_size, doc.temperature)
    }
}

impl From<ObjectiveSpec> for ObjectiveDoc {
    fn from(spec: ObjectiveSpec) -> Self {
        ObjectiveDoc {
            kind: spec.kind,
            u_alpha: spec.utilities.as_ref().map(|u| u.shape.nest3(&u.alpha)),
            u_beta: spec.utilities.as_ref().map(|u| u.shape.nest2(&u.beta)),
            noise_sd: spec.noise_sd,
            batch_size: spec.batch_size,
            temperature: spec.temperature,
        }
    }
}

impl ObjectiveSpec {
    pub fn new(
        kind: ObjectiveKind,
        utilities: Option<Utilities>,
        noise_sd: f64,
        batch_size: usize,
        temperature: f64,
    ) -> Result<Self, ObjectiveError> {
        if kind != ObjectiveKind::ToyQuadratic && utilities.is_none() {
            return Err(ObjectiveError::Invalid("surrogate objectives need utilities".into()));
        }
        if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
            return Err(ObjectiveError::Invalid(format!("noise_sd {noise_sd} must be >= 0")));
        }
        if batch_size == 0 {
            return Err(ObjectiveError::Invalid("batch_size must be at least 1".into()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(ObjectiveError::Invalid(format!("temperature {temperature} must be > 0")));
        }
        Ok(ObjectiveSpec { kind, utilities, noise_sd, batch_size, temperature })
    }

    pub fn linear(utilities: Utilities) -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::LinearSurrogate,
            utilities: Some(utilities),
            noise_sd: 0.0,
            batch_size: DEFAULT_BATCH_SIZE,
            temperature: 1.0,
        }
    }

    pub fn noisy(utilities: Utilities, noise_sd: f64, batch_size: usize) -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::NoisySurrogate,
            utilities: Some(utilities),
            noise_sd,
            batch_size,
            temperature: 1.0,
        }
    }

    pub fn toy() -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::ToyQuadratic,
            utilities: None,
            noise_sd: 0.0,
            batch_size: 1,
            temperature: 1.0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("objective serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ObjectiveError> {
        Ok(serde_json::from_str(text)?)
    }

    fn utilities_for(&self, shape: Shape) -> &Utilities {
        let u = self.utilities.as_ref().expect("surrogate objectives carry utilities");
        assert_eq!(u.shape, shape, "utilities do not match the parameter shape");
        u
    }
}

/// Value and gradient of an objective at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub value: f64,
    pub grad_alpha: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

/// A (possibly stochastic) differentiable objective over architecture parameters.
pub trait Objective {
    fn evaluate(&self, params: &ArchParams, rng: &mut dyn RngCore) -> GradSample;
}

impl Objective for ObjectiveSpec {
    fn evaluate(&self, params: &ArchParams, rng: &mut dyn RngCore) -> GradSample {
        surrogate_value_grad(params, self, rng)
    }
}

/// `||x||^2` and its gradient `2x`.
pub fn toy_objective(x: &[f64]) -> (f64, Vec<f64>) {
    (x.iter().map(|v| v * v).sum(), x.iter().map(|v| 2.0 * v).collect())
}

/// Exact negated score and gradient at a (possibly soft) point.
fn linear_value_grad(u: &Utilities, alpha: &[f64], beta: &[f64]) -> GradSample {
    let prefix = ThetaMatrix::from_tensor(u.shape, u.alpha.clone());
    let depth_scores = prefix.apply_transpose(alpha);
    let value = -depth_scores
        .iter()
        .zip(&u.beta)
        .zip(beta)
        .map(|((d, ub), b)| (d + ub) * b)
        .sum::<f64>();
    let grad_alpha = prefix.apply(beta).into_iter().map(|v| -v).collect();
    let grad_beta = depth_scores.iter().zip(&u.beta).map(|(d, ub)| -(d + ub)).collect();
    GradSample { value, grad_alpha, grad_beta }
}

/// Evaluates `spec` at `params`.
///
/// The noisy surrogate draws `batch_size` Gumbel samples. Its value averages
/// the negated discrete score of each hard sample plus Gaussian noise; its
/// gradient averages the exact surrogate gradient taken at each soft sample
/// (a straight-through estimator: the softmax Jacobian is not applied).
pub fn surrogate_value_grad(params: &ArchParams, spec: &ObjectiveSpec, rng: &mut dyn RngCore) -> GradSample {
    match spec.kind {
        ObjectiveKind::ToyQuadratic => {
            let (va, ga) = toy_objective(params.alpha());
            let (vb, gb) = toy_objective(params.beta());
            GradSample { value: va + vb, grad_alpha: ga, grad_beta: gb }
        }
        ObjectiveKind::LinearSurrogate => {
            linear_value_grad(spec.utilities_for(params.shape()), params.alpha(), params.beta())
        }
        ObjectiveKind::NoisySurrogate => {
            let u = spec.utilities_for(params.shape());
            let shape = params.shape();
            let noise = Normal::new(0.0, spec.noise_sd).expect("validated noise level");
            let mut value = 0.0;
            let mut grad_alpha = vec![0.0; shape.alpha_len()];
            let mut grad_beta = vec![0.0; shape.beta_len()];
            for _ in 0..spec.batch_size {
                let soft = gumbel_sample(params, spec.temperature, SampleMode::Soft, rng)
                    .expect("parameters have a nonzero entry in every row");
                let arch = argmax_arch(&soft.point);
                value += -score_of(&arch, u) + noise.sample(rng);
                let g = linear_value_grad(u, soft.alpha_hat(), soft.beta_hat());
                grad_alpha.iter_mut().zip(&g.grad_alpha).for_each(|(a, v)| *a += v);
                grad_beta.iter_mut().zip(&g.grad_beta).for_each(|(a, v)| *a += v);
            }
            let n = spec.batch_size as f64;
            grad_alpha.iter_mut().for_each(|v| *v /= n);
            grad_beta.iter_mut().for_each(|v| *v /= n);
            GradSample { value: value / n, grad_alpha, grad_beta }
        }
    }
}

fn argmax_arch(point: &ArchParams) -> DiscreteArch {
    let shape = point.shape();
    let mut depth = Vec::with_capacity(shape.stages);
    let mut config = Vec::with_capacity(shape.stages);
    for s in 0..shape.stages {
        let d = argmax_lowest(point.beta_row(s)) + 1;
        depth.push(d);
        config.push((0..d).map(|b| argmax_lowest(point.alpha_row(s, b))).collect());
    }
    DiscreteArch { depth, config }
}

fn score_of(arch: &DiscreteArch, u: &Utilities) -> f64 {
    let shape = u.shape;
    arch.config
        .iter()
        .enumerate()
        .map(|(s, configs)| {
            let blocks: f64 = configs.iter().enumerate().map(|(b, &c)| u.alpha[shape.alpha_index(s, b, c)]).sum();
            blocks + u.beta[shape.beta_index(s, arch.depth[s] - 1)]
        })
        .sum()
}

/// Ground-truth score of a discrete architecture: the negated objective at its
/// one-hot parameters. For the surrogates this is the sum of the active block
/// utilities plus the depth utility of every stage.
pub fn discrete_score(arch: &DiscreteArch, spec: &ObjectiveSpec) -> f64 {
    match &spec.utilities {
        Some(u) if spec.kind != ObjectiveKind::ToyQuadratic => score_of(arch, u),
        _ => {
            // Every row of a one-hot point contributes exactly 1 to the squared norm.
            let stages = arch.depth.len();
            let blocks = spec
                .utilities
                .as_ref()
                .map_or_else(|| arch.depth.iter().copied().max().unwrap_or(0), |u| u.shape.max_depth);
            -((stages * blocks + stages) as f64)
        }
    }
}

/// Seeded synthetic utilities.
///
/// Heavier configurations and deeper stages are more useful, with
/// diminishing returns and per-entry noise, so the latency budget forces real
/// trade-offs.
pub fn generate_utilities(spec: &SpaceSpec, seed: u64, noise: f64) -> Utilities {
    let shape = spec.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nominal: Vec<f64> = (0..shape.configs).map(|c| nominal_cost(spec, c)).collect();
    let max_nominal = nominal.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let mut alpha = vec![0.0; shape.alpha_len()];
    let mut beta = vec![0.0; shape.beta_len()];
    for s in 0..shape.stages {
        let stage_weight = 0.5 + rng.random::<f64>();
        for b in 0..shape.max_depth {
            for c in 0..shape.configs {
                let base = (nominal[c] / max_nominal).sqrt();
                alpha[shape.alpha_index(s, b, c)] =
                    stage_weight * (base + noise * (2.0 * rng.random::<f64>() - 1.0));
            }
            beta[shape.beta_index(s, b)] =
                0.2 * (b as f64 + 1.0).ln() + noise * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    Utilities { shape, alpha, beta }
}
