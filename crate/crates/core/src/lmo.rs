//! Linear minimization over a product of simplices with one knapsack row.
//!
//! Every Frank-Wolfe step and both projection LPs reduce to the relaxed
//! multiple-choice knapsack problem
//!
//! ```text
//! max  sum_i sum_j p_ij u_ij
//! s.t. sum_i sum_j t_ij u_ij <= T
//!      sum_j u_ij = 1   for every group i
//!      u_ij >= 0
//! ```
//!
//! [`solve_relaxed_mckp`] solves it exactly in `O(n log n)`: within a group
//! only the upper convex hull of the (cost, value) points matters, and the
//! hull segments of all groups are bought greedily in order of decreasing
//! value per unit cost. Only the last segment bought can be fractional, so the
//! solution is one-hot in every group except at most one, which has at most
//! two nonzero weights.
//!
//! [`reference_lp`] is a dense two-phase simplex used as an independent check.

use std::cmp::Ordering;

use thiserror::Error;

use crate::FEASIBILITY_TOL;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmoError {
    #[error("infeasible: the cheapest selection costs {min_cost}, budget is {budget}")]
    Infeasible { min_cost: f64, budget: f64 },
    #[error("group {0} has no items")]
    EmptyGroup(usize),
    #[error("item {item} of group {group} has invalid value or cost")]
    InvalidItem { group: usize, item: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Item {
    pub value: f64,
    pub cost: f64,
}

impl Item {
    pub fn new(value: f64, cost: f64) -> Self {
        Item { value, cost }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McKpInstance {
    pub groups: Vec<Vec<Item>>,
    pub budget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

/// One weight vector per group, each on its simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    pub weights: Vec<Vec<f64>>,
}

impl McKpInstance {
    pub fn new(groups: Vec<Vec<Item>>, budget: f64) -> Self {
        McKpInstance { groups, budget }
    }

    fn check(&self) -> Result<(), LmoError> {
        for (g, items) in self.groups.iter().enumerate() {
            if items.is_empty() {
                return Err(LmoError::EmptyGroup(g));
            }
            for (j, it) in items.iter().enumerate() {
                if !it.value.is_finite() || !it.cost.is_finite() || it.cost < 0.0 {
                    return Err(LmoError::InvalidItem { group: g, item: j });
                }
            }
        }
        Ok(())
    }

    /// Cost of the cheapest selection.
    pub fn min_cost(&self) -> f64 {
        self.groups
            .iter()
            .map(|items| items.iter().map(|it| it.cost).fold(f64::INFINITY, f64::min))
            .sum()
    }

    /// Number of integral selections, saturating.
    pub fn integral_count(&self) -> usize {
        self.groups.iter().fold(1usize, |acc, g| acc.saturating_mul(g.len()))
    }

    pub fn value_of(&self, choice: &[usize]) -> f64 {
        self.groups.iter().zip(choice).map(|(g, &j)| g[j].value).sum()
    }

    pub fn cost_of(&self, choice: &[usize]) -> f64 {
        self.groups.iter().zip(choice).map(|(g, &j)| g[j].cost).sum()
    }

    /// The same problem as a dense LP in `min c'x` form, variables laid out
    /// group by group.
    pub fn to_linear_program(&self, sense: Sense) -> LinearProgram {
        let n: usize = self.groups.iter().map(Vec::len).sum();
        let sign = match sense {
            Sense::Min => 1.0,
            Sense::Max => -1.0,
        };
        let mut c = Vec::with_capacity(n);
        let mut cost_row = Vec::with_capacity(n);
        let mut a_eq = Vec::with_capacity(self.groups.len());
        let mut offset = 0;
        for items in &self.groups {
            let mut row = vec![0.0; n];
            for (j, it) in items.iter().enumerate() {
                c.push(sign * it.value);
                cost_row.push(it.cost);
                row[offset + j] = 1.0;
            }
            offset += items.len();
            a_eq.push(row);
        }
        let (a_ub, b_ub) = if self.budget.is_finite() {
            (vec![cost_row], vec![self.budget])
        } else {
            (Vec::new(), Vec::new())
        };
        LinearProgram { c, a_eq, b_eq: vec![1.0; self.groups.len()], a_ub, b_ub }
    }
}

impl SimplexPoint {
    pub fn objective(&self, inst: &McKpInstance) -> f64 {
        self.dot(inst, |it| it.value)
    }

    pub fn cost(&self, inst: &McKpInstance) -> f64 {
        self.dot(inst, |it| it.cost)
    }

    fn dot(&self, inst: &McKpInstance, f: impl Fn(&Item) -> f64) -> f64 {
        self.weights
            .iter()
            .zip(&inst.groups)
            .map(|(w, items)| w.iter().zip(items).map(|(wi, it)| wi * f(it)).sum::<f64>())
            .sum()
    }

    /// Number of strictly positive weights in each group.
    pub fn nonzeros(&self) -> Vec<usize> {
        self.weights.iter().map(|w| w.iter().filter(|&&v| v > 0.0).count()).collect()
    }

    /// Groups with more than one nonzero weight.
    pub fn fractional_groups(&self) -> Vec<usize> {
        self.nonzeros()
            .into_iter()
            .enumerate()
            .filter(|&(_, nz)| nz > 1)
            .map(|(g, _)| g)
            .collect()
    }

    /// Index of the largest weight in each group, lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        self.weights.iter().map(|w| argmax_lowest(w)).collect()
    }
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Upper convex hull of a group's (cost, value) points, as item indices in
/// increasing cost. The first entry is the cheapest item (highest value on
/// ties, then lowest index).
fn efficient_frontier(items: &[Item]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[a]
            .cost
            .total_cmp(&items[b].cost)
            .then(items[b].value.total_cmp(&items[a].value))
            .then(a.cmp(&b))
    });
    let mut hull: Vec<usize> = Vec::with_capacity(items.len());
    for j in order {
        let p = items[j];
        if let Some(&last) = hull.last() {
            if p.value <= items[last].value {
                continue;
            }
        }
        while hull.len() >= 2 {
            let a = items[hull[hull.len() - 2]];
            let b = items[hull[hull.len() - 1]];
            // Drop b when it lies on or below the chord from a to p.
            let cross = (b.cost - a.cost) * (p.value - a.value) - (b.value - a.value) * (p.cost - a.cost);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(j);
    }
    hull
}

fn oriented(inst: &McKpInstance, sense: Sense) -> McKpInstance {
    match sense {
        Sense::Max => inst.clone(),
        Sense::Min => McKpInstance {
            groups: inst
                .groups
                .iter()
                .map(|g| g.iter().map(|it| Item::new(-it.value, it.cost)).collect())
                .collect(),
            budget: inst.budget,
        },
    }
}

struct Segment {
    group: usize,
    step: usize,
    efficiency: f64,
    cost: f64,
}

/// Solves the LP relaxation exactly. See the module docs for the structure
/// of the returned point.
pub fn solve_relaxed_mckp(inst: &McKpInstance, sense: Sense) -> Result<SimplexPoint, LmoError> {
    inst.check()?;
    let work = oriented(inst, sense);
    let hulls: Vec<Vec<usize>> = work.groups.iter().map(|g| efficient_frontier(g)).collect();

    let base_cost: f64 = hulls.iter().zip(&work.groups).map(|(h, g)| g[h[0]].cost).sum();
    let mut residual = inst.budget - base_cost;
    if residual < -FEASIBILITY_TOL {
        return Err(LmoError::Infeasible { min_cost: base_cost, budget: inst.budget });
    }
    residual = residual.max(0.0);

    let mut segments = Vec::new();
    for (g, hull) in hulls.iter().enumerate() {
        for step in 0..hull.len() - 1 {
            let (a, b) = (work.groups[g][hull[step]], work.groups[g][hull[step + 1]]);
            let cost = b.cost - a.cost;
            segments.push(Segment { group: g, step, efficiency: (b.value - a.value) / cost, cost });
        }
    }
    // Stable: equal efficiencies keep group order, then hull order.
    segments.sort_by(|x, y| y.efficiency.partial_cmp(&x.efficiency).unwrap_or(Ordering::Equal));

    let mut position: Vec<usize> = vec![0; hulls.len()];
    let mut fractional: Option<(usize, f64)> = None;
    for seg in &segments {
        if residual <= 0.0 {
            break;
        }
        if seg.cost <= residual {
            residual -= seg.cost;
            position[seg.group] = seg.step + 1;
        } else {
            fractional = Some((seg.group, residual / seg.cost));
            break;
        }
    }

    let weights = work
        .groups
        .iter()
        .enumerate()
        .map(|(g, items)| {
            let mut w = vec![0.0; items.len()];
            let here = hulls[g][position[g]];
            match fractional {
                Some((fg, frac)) if fg == g => {
                    let next = hulls[g][position[g] + 1];
                    w[here] = 1.0 - frac;
                    w[next] = frac;
                }
                _ => w[here] = 1.0,
            }
            w
        })
        .collect();
    Ok(SimplexPoint { weights })
}

/// Integral MCKP by greedy improvement.
///
/// Starts from the LP optimum with its fractional group rounded to the cheaper
/// of its two items, then repeatedly applies the single-item swap with the
/// largest value gain that still fits the remaining budget. The result is
/// never worse than the rounded LP optimum but is not guaranteed optimal.
pub fn solve_mckp_greedy(inst: &McKpInstance, sense: Sense) -> Result<Vec<usize>, LmoError> {
    let lp = solve_relaxed_mckp(inst, sense)?;
    let work = oriented(inst, sense);
    let mut choice: Vec<usize> = lp
        .weights
        .iter()
        .zip(&work.groups)
        .map(|(w, items)| {
            // The cheaper of the (at most two) supported items.
            (0..w.len())
                .filter(|&j| w[j] > 0.0)
                .min_by(|&a, &b| items[a].cost.total_cmp(&items[b].cost).then(a.cmp(&b)))
                .expect("every group has support")
        })
        .collect();
    let mut residual = inst.budget - work.cost_of(&choice);
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for (g, items) in work.groups.iter().enumerate() {
            let current = items[choice[g]];
            for (j, it) in items.iter().enumerate() {
                let gain = it.value - current.value;
                if gain > 0.0 && it.cost - current.cost <= residual && best.is_none_or(|(_, _, bg)| gain > bg) {
                    best = Some((g, j, gain));
                }
            }
        }
        match best {
            Some((g, j, _)) => {
                residual -= work.groups[g][j].cost - work.groups[g][choice[g]].cost;
                choice[g] = j;
            }
            None => break,
        }
    }
    Ok(choice)
}

/// A dense LP: minimize `c'x` subject to `A_eq x = b_eq`, `A_ub x <= b_ub`, `x >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

const PIVOT_TOL: f64 = 1e-11;

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    /// Reduced costs, with the negated objective value in the last slot.
    objective: Vec<f64>,
}

impl Tableau {
    fn width(&self) -> usize {
        self.objective.len() - 1
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        self.rows[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r {
                let f = row[col];
                if f != 0.0 {
                    row.iter_mut().zip(&pivot_row).for_each(|(v, pv)| *v -= f * pv);
                }
            }
        }
        let f = self.objective[col];
        if f != 0.0 {
            self.objective.iter_mut().zip(&pivot_row).for_each(|(v, pv)| *v -= f * pv);
        }
        self.basis[r] = col;
    }

    fn set_costs(&mut self, costs: &[f64]) {
        let w = self.width();
        let mut obj = vec![0.0; w + 1];
        obj[..costs.len()].copy_from_slice(costs);
        for (row, &bv) in self.rows.iter().zip(&self.basis) {
            let cb = obj[bv];
            if cb != 0.0 {
                obj.iter_mut().zip(row).for_each(|(o, v)| *o -= cb * v);
            }
        }
        self.objective = obj;
    }

    /// Bland's rule simplex on columns `< allowed`.
    fn optimize(&mut self, allowed: usize) -> Result<(), LpError> {
        let w = self.width();
        loop {
            let Some(col) = (0..allowed).find(|&j| self.objective[j] < -PIVOT_TOL) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[col];
                if a > PIVOT_TOL {
                    let ratio = row[w] / a;
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - PIVOT_TOL
                                || ((ratio - lr).abs() <= PIVOT_TOL && self.basis[i] < self.basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let (r, _) = leave.ok_or(LpError::Unbounded)?;
            self.pivot(r, col);
        }
    }
}

/// Dense two-phase simplex with Bland's rule. Returns an optimal basic
/// feasible solution.
pub fn reference_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    let n = lp.c.len();
    if lp.a_eq.len() != lp.b_eq.len() || lp.a_ub.len() != lp.b_ub.len() {
        return Err(LpError::Dimension("row and right-hand-side counts differ".into()));
    }
    if lp.a_eq.iter().chain(&lp.a_ub).any(|row| row.len() != n) {
        return Err(LpError::Dimension(format!("every constraint row needs {n} entries")));
    }
    let m_ub = lp.a_ub.len();
    let m = lp.a_eq.len() + m_ub;
    // Columns: originals, one slack per inequality, one artificial per row, rhs.
    let art0 = n + m_ub;
    let width = art0 + m;
    let mut rows = Vec::with_capacity(m);
    let constraints = lp
        .a_eq
        .iter()
        .zip(&lp.b_eq)
        .map(|(a, &b)| (a, b, None))
        .chain(lp.a_ub.iter().zip(&lp.b_ub).enumerate().map(|(k, (a, &b))| (a, b, Some(k))));
    for (i, (a, b, slack)) in constraints.enumerate() {
        let mut row = vec![0.0; width + 1];
        row[..n].copy_from_slice(a);
        if let Some(k) = slack {
            row[n + k] = 1.0;
        }
        row[width] = b;
        if b < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        row[art0 + i] = 1.0;
        rows.push(row);
    }
    let mut tab = Tableau { rows, basis: (art0..art0 + m).collect(), objective: vec![0.0; width + 1] };

    let mut phase_one = vec![0.0; width];
    phase_one[art0..].iter_mut().for_each(|v| *v = 1.0);
    tab.set_costs(&phase_one);
    tab.optimize(width)?;
    let scale = 1.0 + lp.b_eq.iter().chain(&lp.b_ub).map(|b| b.abs()).fold(0.0, f64::max);
    if -tab.objective[width] > 1e-9 * scale {
        return Err(LpError::Infeasible);
    }

    // Drive artificials out of the basis; rows where that is impossible are redundant.
    let mut r = 0;
    while r < tab.rows.len() {
        if tab.basis[r] >= art0 {
            match (0..art0).find(|&j| tab.rows[r][j].abs() > PIVOT_TOL) {
                Some(col) => {
                    tab.pivot(r, col);
                    r += 1;
                }
                None => {
                    tab.rows.remove(r);
                    tab.basis.remove(r);
                }
            }
        } else {
            r += 1;
        }
    }

    tab.set_costs(&lp.c);
    tab.optimize(art0)?;
    let mut x = vec![0.0; n];
    for (row, &bv) in tab.rows.iter().zip(&tab.basis) {
        if bv < n {
            x[bv] = row[width].max(0.0);
        }
    }
    let objective = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution { x, objective })
}
