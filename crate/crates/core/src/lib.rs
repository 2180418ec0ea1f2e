//! Hard-constrained differentiable architecture search.
//!
//! The search space is a product of simplices: one row per block holding a
//! distribution over block configurations (`alpha`) and one row per stage
//! holding a distribution over stage depths (`beta`). Expected latency is the
//! bilinear form `alpha' * Theta * beta`, which is linear in each block when
//! the other is held fixed. That makes every block-coordinate Frank-Wolfe step
//! a relaxed multiple-choice knapsack LP, so iterates never leave the latency
//! budget, and the final discretization is another pair of knapsack LPs that
//! keep the discrete architecture under budget as well.
//!
//! Module map:
//!
//! * [`space`]: search-space dimensions, continuous parameters, discrete
//!   architectures, Gumbel-Softmax sampling and counting.
//! * [`latency`]: latency tables, the sparse `Theta` operator and the
//!   expected/discrete latency formulas.
//! * [`lmo`]: the linear minimization oracle (relaxed MCKP), a greedy integral
//!   MCKP solver and a dense simplex reference LP.
//! * [`init`]: feasible starting points.
//! * [`objective`]: differentiable objectives standing in for validation loss.
//! * [`optimizer`]: stochastic Frank-Wolfe variants and penalty baselines.
//! * [`project`]: argmax and credit-maximizing discretization.
//! * [`oracle`]: brute-force enumeration and rank statistics.

pub mod init;
pub mod latency;
pub mod lmo;
pub mod objective;
pub mod optimizer;
pub mod oracle;
pub mod project;
pub mod space;

pub use init::{balanced_init, lightest_init};
pub use latency::{build_theta, discrete_latency, expected_latency, LatencyTable, ThetaMatrix};
pub use lmo::{solve_mckp_greedy, solve_relaxed_mckp, Item, McKpInstance, Sense, SimplexPoint};
pub use objective::{discrete_score, GradSample, Objective, ObjectiveKind, ObjectiveSpec};
pub use optimizer::{bcsfw_search, BlockRule, SearchTrace, SolverConfig, StepSchedule};
pub use oracle::{enumerate, rank_correlation, EnumerationResult};
pub use project::{project_argmax, project_credit, Projection};
pub use space::{
    count_space, from_discrete, gumbel_sample, to_discrete, validate, ArchParams, Block,
    ConfigLabel, DiscreteArch, GumbelSample, SampleMode, Shape, SpaceSpec,
};

/// Absolute slack, in milliseconds, within which a latency budget counts as met.
pub const FEASIBILITY_TOL: f64 = 1e-9;
