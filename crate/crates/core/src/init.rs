//! Feasible starting points for the search.
//!
//! [`lightest_init`] puts all mass on the cheapest architecture. It is always
//! feasible when anything is, but every other configuration starts with zero
//! probability and therefore never receives sampled gradient.
//!
//! [`balanced_init`] looks for the feasible point closest to uniform. With
//! configurations sorted by latency it minimizes the squared differences of
//! consecutive probabilities in every row, alternating between `beta` (first)
//! and `alpha`, each time under the latency budget with the other block fixed.
//!
//! Each inner problem is a separable strictly convex QP over a product of
//! simplices coupled by a single knapsack row. It is solved exactly through
//! its Lagrangian: for a fixed budget multiplier every row is an independent
//! small simplex-constrained QP (active-set), and the multiplier is found by
//! bisection on the monotone cost curve.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::latency::{build_theta, expected_latency, LatencyError, LatencyTable};
use crate::space::{ArchParams, Block, SpaceSpec};
use crate::FEASIBILITY_TOL;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_ROUNDS: usize = 50;

#[derive(Debug, Error)]
pub enum InitError {
    #[error("budget {budget} ms is infeasible: the lightest architecture needs {min_latency} ms")]
    Infeasible { min_latency: f64, budget: f64 },
    #[error(transparent)]
    Latency(#[from] LatencyError),
}

/// All mass on the cheapest config of every block and on the minimum depth.
pub fn lightest_init(spec: &SpaceSpec, table: &LatencyTable) -> Result<ArchParams, InitError> {
    table.check_against(spec)?;
    let shape = spec.shape();
    let mut alpha = vec![0.0; shape.alpha_len()];
    let mut beta = vec![0.0; shape.beta_len()];
    for s in 0..shape.stages {
        for b in 0..shape.max_depth {
            let row = table.row(s, b);
            let cheapest = (0..row.len()).fold(0, |best, c| if row[c] < row[best] { c } else { best });
            alpha[shape.alpha_index(s, b, cheapest)] = 1.0;
        }
        beta[shape.beta_index(s, spec.first_depth_index())] = 1.0;
    }
    Ok(ArchParams::new(shape, spec.min_depth, alpha, beta).expect("shape is consistent"))
}

/// One solved inner QP: rows of the updated block with their knapsack costs.
///
/// For `beta` the rows cover the allowed depths only.
#[derive(Debug, Clone)]
pub struct InnerQp {
    pub block: Block,
    pub costs: Vec<Vec<f64>>,
    pub solution: Vec<Vec<f64>>,
    pub budget: f64,
    /// Multiplier of the latency row found by the dual search; infinite when
    /// the budget only admits the cheapest entries of every row.
    pub multiplier: f64,
}

#[derive(Debug, Clone)]
pub struct BalancedInit {
    pub params: ArchParams,
    pub subproblems: Vec<InnerQp>,
    pub rounds: usize,
}

/// Sum of squared consecutive differences, `(alpha part, beta part)`. The
/// beta part only runs over allowed depths.
pub fn smoothness(params: &ArchParams) -> (f64, f64) {
    let shape = params.shape();
    let sq = |row: &[f64]| row.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>();
    let alpha = (0..shape.stages)
        .flat_map(|s| (0..shape.max_depth).map(move |b| (s, b)))
        .map(|(s, b)| sq(params.alpha_row(s, b)))
        .sum();
    let beta = (0..shape.stages)
        .map(|s| sq(&params.beta_row(s)[params.min_depth() - 1..]))
        .sum();
    (alpha, beta)
}

pub fn balanced_init(
    spec: &SpaceSpec,
    table: &LatencyTable,
    budget: f64,
    tol: f64,
) -> Result<ArchParams, InitError> {
    balanced_init_detailed(spec, table, budget, tol).map(|b| b.params)
}

/// [`balanced_init`] that also returns every inner QP it solved.
pub fn balanced_init_detailed(
    spec: &SpaceSpec,
    table: &LatencyTable,
    budget: f64,
    tol: f64,
) -> Result<BalancedInit, InitError> {
    let mut params = lightest_init(spec, table)?;
    let min_latency = expected_latency(&params, table)?;
    if min_latency > budget + FEASIBILITY_TOL {
        return Err(InitError::Infeasible { min_latency, budget });
    }
    let theta = build_theta(table, spec)?;
    let shape = spec.shape();
    let first = spec.first_depth_index();
    let mut subproblems = Vec::new();
    let total = |p: &ArchParams| {
        let (a, b) = smoothness(p);
        a + b
    };
    let mut previous = total(&params);
    let mut rounds = 0;

    while rounds < MAX_ROUNDS {
        rounds += 1;

        let depth_costs = theta.apply_transpose(params.alpha());
        let costs: Vec<Vec<f64>> = (0..shape.stages)
            .map(|s| depth_costs[shape.beta_index(s, first)..shape.beta_index(s, 0) + shape.max_depth].to_vec())
            .collect();
        let (solution, multiplier) = solve_coupled_qp(&costs, budget);
        let beta = params.beta_mut();
        for (s, row) in solution.iter().enumerate() {
            beta[shape.beta_index(s, first)..shape.beta_index(s, 0) + shape.max_depth].copy_from_slice(row);
        }
        subproblems.push(InnerQp { block: Block::Beta, costs, solution, budget, multiplier });

        let config_costs = theta.apply(params.beta());
        let costs: Vec<Vec<f64>> = config_costs.chunks(shape.configs).map(<[f64]>::to_vec).collect();
        let (solution, multiplier) = solve_coupled_qp(&costs, budget);
        params.alpha_mut().copy_from_slice(&solution.concat());
        subproblems.push(InnerQp { block: Block::Alpha, costs, solution, budget, multiplier });

        let current = total(&params);
        let decrease = previous - current;
        previous = current;
        if decrease < tol {
            break;
        }
    }
    Ok(BalancedInit { params, subproblems, rounds })
}

/// Minimizes `sum_g x_g' L x_g` over a product of simplices subject to
/// `sum_g c_g' x_g <= budget`, where `L` is the path Laplacian (so
/// `x' L x = sum_i (x_{i+1} - x_i)^2`). Returns the solution and the budget
/// multiplier. The caller guarantees feasibility.
fn solve_coupled_qp(costs: &[Vec<f64>], budget: f64) -> (Vec<Vec<f64>>, f64) {
    let solve_at = |lambda: f64| -> Vec<Vec<f64>> {
        costs
            .iter()
            .map(|c| simplex_qp(&c.iter().map(|v| lambda * v).collect::<Vec<_>>(), None))
            .collect()
    };
    let cost_of = |x: &[Vec<f64>]| -> f64 {
        x.iter().zip(costs).map(|(xg, cg)| xg.iter().zip(cg).map(|(a, b)| a * b).sum::<f64>()).sum()
    };

    let free = solve_at(0.0);
    if cost_of(&free) <= budget {
        return (free, 0.0);
    }
    // The limit as the multiplier grows: every row restricted to its cheapest entries.
    let floor: Vec<Vec<f64>> = costs
        .iter()
        .map(|c| {
            let least = c.iter().cloned().fold(f64::INFINITY, f64::min);
            let cheapest: Vec<bool> = c.iter().map(|&v| v == least).collect();
            simplex_qp(&vec![0.0; c.len()], Some(&cheapest))
        })
        .collect();
    let slack = 1e-12 * (1.0 + budget.abs());
    if cost_of(&floor) >= budget - slack {
        return (floor, f64::INFINITY);
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut at_hi = solve_at(hi);
    while cost_of(&at_hi) > budget {
        lo = hi;
        hi *= 2.0;
        at_hi = solve_at(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi {
            break;
        }
        let at_mid = solve_at(mid);
        if cost_of(&at_mid) > budget {
            lo = mid;
        } else {
            hi = mid;
            at_hi = at_mid;
        }
    }
    (at_hi, hi)
}

/// `min x' L x + q' x` over the probability simplex, `L` the path Laplacian,
/// optionally with the entries outside `allowed` fixed at zero. Primal
/// active-set method; the problem is strictly convex on the simplex.
fn simplex_qp(q: &[f64], allowed: Option<&[bool]>) -> Vec<f64> {
    let n = q.len();
    if n == 1 {
        return vec![1.0];
    }
    // A constant linear term is absorbed by the simplex multiplier.
    if allowed.is_none() && q.iter().all(|&v| v == q[0]) {
        return vec![1.0 / n as f64; n];
    }
    let pinned: Vec<bool> = match allowed {
        Some(a) => a.iter().map(|&ok| !ok).collect(),
        None => vec![false; n],
    };
    let mut at_zero = pinned.clone();
    let start = 1.0 / at_zero.iter().filter(|&&z| !z).count() as f64;
    let mut x: Vec<f64> = at_zero.iter().map(|&z| if z { 0.0 } else { start }).collect();
    for _ in 0..20 * n {
        let free: Vec<usize> = (0..n).filter(|&i| !at_zero[i]).collect();
        let (target, nu) = equality_qp(q, &free);
        let feasible = free.iter().all(|&i| target[i] >= 0.0);
        if feasible {
            for &i in &free {
                x[i] = target[i];
            }
            let grad = laplacian_grad(&x, q);
            let release = (0..n)
                .filter(|&i| at_zero[i] && !pinned[i])
                .map(|i| (i, grad[i] - nu))
                .filter(|&(_, mu)| mu < -1e-13)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match release {
                Some((i, _)) => at_zero[i] = false,
                None => return x,
            }
        } else {
            let mut step = 1.0;
            let mut blocking = free[0];
            for &i in &free {
                let d = target[i] - x[i];
                if target[i] < 0.0 && d < 0.0 {
                    let r = x[i] / -d;
                    if r < step {
                        step = r;
                        blocking = i;
                    }
                }
            }
            for &i in &free {
                x[i] += step * (target[i] - x[i]);
            }
            x[blocking] = 0.0;
            at_zero[blocking] = true;
        }
    }
    x
}

/// `2 L x + q`.
fn laplacian_grad(x: &[f64], q: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let mut lx = 0.0;
            if i > 0 {
                lx += x[i] - x[i - 1];
            }
            if i + 1 < n {
                lx += x[i] - x[i + 1];
            }
            2.0 * lx + q[i]
        })
        .collect()
}

/// Minimizes over the free coordinates with the rest pinned at zero and the
/// simplex equality enforced. Returns the full-length point and the equality
/// multiplier.
fn equality_qp(q: &[f64], free: &[usize]) -> (Vec<f64>, f64) {
    let n = q.len();
    let k = free.len();
    let mut kkt = DMatrix::<f64>::zeros(k + 1, k + 1);
    let mut rhs = DVector::<f64>::zeros(k + 1);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            let l = if i == j {
                (i > 0) as u8 as f64 + (i + 1 < n) as u8 as f64
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            };
            kkt[(a, b)] = 2.0 * l;
        }
        kkt[(a, k)] = -1.0;
        kkt[(k, a)] = 1.0;
        rhs[a] = -q[i];
    }
    rhs[k] = 1.0;
    let sol = kkt.lu().solve(&rhs).expect("KKT system of a strictly convex QP is nonsingular");
    let mut x = vec![0.0; n];
    for (a, &i) in free.iter().enumerate() {
        x[i] = sol[a];
    }
    (x, sol[k])
}
