//! Discretization of a converged continuous point.
//!
//! [`project_argmax`] takes the per-row argmax and ignores the budget.
//! [`project_credit`] maximizes the credit (inner product of the one-hot
//! result with the continuous point) under the budget. It solves two relaxed
//! knapsack LPs in sequence: first `beta` with costs `Theta' alpha*`, then
//! `alpha` with costs induced by the now discrete depths. Each LP solution has
//! at most one fractional row with at most two nonzeros, and that row is
//! resolved by trying both options. The result never exceeds the budget.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latency::{discrete_latency, LatencyTable, ThetaMatrix};
use crate::lmo::{argmax_lowest, solve_mckp_greedy, solve_relaxed_mckp, Item, LmoError, McKpInstance, Sense, SimplexPoint};
use crate::space::{ArchParams, DiscreteArch, Shape};
use crate::FEASIBILITY_TOL;

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("continuous point has latency {latency} ms, above the budget {budget} ms")]
    Infeasible { latency: f64, budget: f64 },
    #[error("latency table shape {table} does not match parameters {params}")]
    Shape { table: Shape, params: Shape },
    #[error(transparent)]
    Lmo(#[from] LmoError),
}

/// Per-row argmax; ties go to the lowest index. May exceed any budget.
pub fn project_argmax(params: &ArchParams) -> DiscreteArch {
    let shape = params.shape();
    let depth: Vec<usize> = (0..shape.stages).map(|s| argmax_lowest(params.beta_row(s)) + 1).collect();
    let config = depth
        .iter()
        .enumerate()
        .map(|(s, &d)| (0..d).map(|b| argmax_lowest(params.alpha_row(s, b))).collect())
        .collect();
    DiscreteArch { depth, config }
}

/// Inner product of the best one-hot completion of `arch` with `params`.
///
/// Blocks beyond a stage's depth do not affect latency, so their one-hot row
/// sits on the row maximum. With this convention the argmax architecture has
/// the largest credit of all.
pub fn credit(arch: &DiscreteArch, params: &ArchParams) -> f64 {
    let shape = params.shape();
    let mut total = 0.0;
    for s in 0..shape.stages {
        total += params.beta_row(s)[arch.depth[s] - 1];
        for b in 0..shape.max_depth {
            let row = params.alpha_row(s, b);
            total += match arch.config[s].get(b) {
                Some(&c) => row[c],
                None => row[argmax_lowest(row)],
            };
        }
    }
    total
}

/// Non-one-hot rows of an LP solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub non_one_hot_rows: usize,
    /// Largest support among those rows; 0 when every row is one-hot.
    pub max_nonzeros: usize,
}

pub fn sparsity_report(solution: &SimplexPoint) -> SparsityReport {
    let nonzeros = solution.nonzeros();
    let fractional: Vec<usize> = nonzeros.into_iter().filter(|&n| n > 1).collect();
    SparsityReport { non_one_hot_rows: fractional.len(), max_nonzeros: fractional.into_iter().max().unwrap_or(0) }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub arch: DiscreteArch,
    pub latency: f64,
    pub credit: f64,
    /// Relaxed solution of the depth LP (groups over allowed depths).
    pub beta_lp: SimplexPoint,
    /// Relaxed solution of the config LP given the discrete depths.
    pub alpha_lp: SimplexPoint,
    /// The argmax architecture already fit the budget and was returned as is.
    pub used_argmax: bool,
}

impl Projection {
    pub fn beta_sparsity(&self) -> SparsityReport {
        sparsity_report(&self.beta_lp)
    }

    pub fn alpha_sparsity(&self) -> SparsityReport {
        sparsity_report(&self.alpha_lp)
    }
}

/// Credit-maximizing projection under budget `budget`.
///
/// When the argmax architecture fits the budget it is returned unchanged: it
/// maximizes credit without constraint. Otherwise the sequential LPs decide.
/// The LPs are solved in both cases and kept in the result.
pub fn project_credit(params: &ArchParams, table: &LatencyTable, budget: f64) -> Result<Projection, ProjectError> {
    project_with(params, table, budget, Rounding::Relaxed)
}

/// Like [`project_credit`] but each discretization goes through the greedy
/// integral MCKP solver instead of rounding the LP solution. The returned LP
/// points are still the relaxed solutions.
pub fn project_credit_greedy(
    params: &ArchParams,
    table: &LatencyTable,
    budget: f64,
) -> Result<Projection, ProjectError> {
    project_with(params, table, budget, Rounding::Greedy)
}

#[derive(Clone, Copy, PartialEq)]
enum Rounding {
    Relaxed,
    Greedy,
}

fn project_with(
    params: &ArchParams,
    table: &LatencyTable,
    budget: f64,
    rounding: Rounding,
) -> Result<Projection, ProjectError> {
    let shape = params.shape();
    if table.shape() != shape {
        return Err(ProjectError::Shape { table: table.shape(), params: shape });
    }
    let theta = ThetaMatrix::from_tensor(shape, table.values().to_vec());
    let latency = theta.bilinear(params.alpha(), params.beta());
    if latency > budget + FEASIBILITY_TOL {
        return Err(ProjectError::Infeasible { latency, budget });
    }
    let first = params.min_depth() - 1;

    // Depths, priced by the continuous alpha.
    let depth_costs = theta.apply_transpose(params.alpha());
    let beta_inst = McKpInstance::new(
        (0..shape.stages)
            .map(|s| {
                (first..shape.max_depth)
                    .map(|k| Item::new(params.beta()[shape.beta_index(s, k)], depth_costs[shape.beta_index(s, k)]))
                    .collect()
            })
            .collect(),
        budget,
    );
    let beta_lp = solve_relaxed_mckp(&beta_inst, Sense::Max)?;
    let beta_choice = match rounding {
        Rounding::Relaxed => resolve(&beta_inst, &beta_lp),
        Rounding::Greedy => solve_mckp_greedy(&beta_inst, Sense::Max)?,
    };
    let depth: Vec<usize> = beta_choice.iter().map(|&k| first + k + 1).collect();

    // Configs, priced by the discrete depths. Inactive blocks are free.
    let alpha_inst = McKpInstance::new(
        (0..shape.stages)
            .flat_map(|s| (0..shape.max_depth).map(move |b| (s, b)))
            .map(|(s, b)| {
                let active = b < depth[s];
                params
                    .alpha_row(s, b)
                    .iter()
                    .zip(table.row(s, b))
                    .map(|(&v, &t)| Item::new(v, if active { t } else { 0.0 }))
                    .collect()
            })
            .collect(),
        budget,
    );
    let alpha_lp = solve_relaxed_mckp(&alpha_inst, Sense::Max)?;
    let alpha_choice = match rounding {
        Rounding::Relaxed => resolve(&alpha_inst, &alpha_lp),
        Rounding::Greedy => solve_mckp_greedy(&alpha_inst, Sense::Max)?,
    };
    let config = depth
        .iter()
        .enumerate()
        .map(|(s, &d)| alpha_choice[s * shape.max_depth..s * shape.max_depth + d].to_vec())
        .collect();
    let mut arch = DiscreteArch { depth, config };

    let argmax = project_argmax(params);
    let used_argmax = discrete_latency(&argmax, table) <= budget + FEASIBILITY_TOL;
    if used_argmax {
        arch = argmax;
    }
    let latency = discrete_latency(&arch, table);
    assert!(latency <= budget + FEASIBILITY_TOL, "projection exceeded the budget: {latency} > {budget}");
    let credit = credit(&arch, params);
    Ok(Projection { arch, latency, credit, beta_lp, alpha_lp, used_argmax })
}

/// Integral choice from an LP solution: one-hot rows are kept and the
/// fractional row (if any) takes whichever supported item has the larger
/// value while fitting the budget, or else the cheaper one.
fn resolve(inst: &McKpInstance, lp: &SimplexPoint) -> Vec<usize> {
    let mut choice = lp.argmax();
    let fractional = lp.fractional_groups();
    if let Some(&g) = fractional.first() {
        let items = &inst.groups[g];
        let mut support: Vec<usize> = (0..items.len()).filter(|&j| lp.weights[g][j] > 0.0).collect();
        support.sort_by(|&a, &b| items[b].value.total_cmp(&items[a].value).then(a.cmp(&b)));
        let fits = |j: usize| {
            let mut c = choice.clone();
            c[g] = j;
            inst.cost_of(&c) <= inst.budget + FEASIBILITY_TOL
        };
        choice[g] = support.iter().copied().find(|&j| fits(j)).unwrap_or_else(|| {
            support
                .iter()
                .copied()
                .min_by(|&a, &b| items[a].cost.total_cmp(&items[b].cost).then(a.cmp(&b)))
                .expect("fractional row has support")
        });
    }
    choice
}

/// Side-by-side numbers for the argmax and credit projections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub argmax_latency: f64,
    pub projected_latency: f64,
    pub credit_argmax: f64,
    pub credit_projected: f64,
}

pub fn projection_report(params: &ArchParams, table: &LatencyTable, projection: &Projection) -> ProjectionReport {
    let argmax = project_argmax(params);
    ProjectionReport {
        argmax_latency: discrete_latency(&argmax, table),
        projected_latency: projection.latency,
        credit_argmax: credit(&argmax, params),
        credit_projected: projection.credit,
    }
}
