//! Brute-force ground truth for small spaces and rank statistics.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latency::{discrete_latency, LatencyError, LatencyTable};
use crate::objective::{discrete_score, ObjectiveSpec};
use crate::space::{count_space, DiscreteArch, SpaceSpec};
use crate::FEASIBILITY_TOL;

/// Largest space [`enumerate`] accepts.
pub const MAX_ENUMERATION: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("space has {0} architectures, more than the enumeration limit")]
    TooLarge(BigUint),
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error("inputs have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations, got {0}")]
    TooShort(usize),
    #[error("correlation is undefined for constant input")]
    Constant,
    #[error("architecture is not part of the enumerated space")]
    NotEnumerated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredArch {
    pub arch: DiscreteArch,
    pub latency: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationResult {
    pub archs: Vec<ScoredArch>,
    pub budget: f64,
    /// Highest-scoring architecture within budget (first on ties).
    pub best_feasible: Option<usize>,
}

impl EnumerationResult {
    pub fn feasible(&self) -> impl Iterator<Item = &ScoredArch> {
        self.archs.iter().filter(move |a| a.latency <= self.budget + FEASIBILITY_TOL)
    }

    pub fn position(&self, arch: &DiscreteArch) -> Option<usize> {
        self.archs.iter().position(|a| &a.arch == arch)
    }
}

/// Every architecture of `spec` in lexicographic order of (depths, configs),
/// with its latency and score.
pub fn enumerate(
    spec: &SpaceSpec,
    table: &LatencyTable,
    objective: &ObjectiveSpec,
    budget: f64,
) -> Result<EnumerationResult, OracleError> {
    let count = count_space(spec);
    if count > BigUint::from(MAX_ENUMERATION) {
        return Err(OracleError::TooLarge(count));
    }
    table.check_against(spec)?;
    let (stages, n) = (spec.num_stages, spec.num_configs());
    let mut archs = Vec::with_capacity(usize::try_from(&count).unwrap_or(0));
    let mut depth = vec![spec.min_depth; stages];
    loop {
        let active: usize = depth.iter().sum();
        let mut flat = vec![0usize; active];
        loop {
            let mut config = Vec::with_capacity(stages);
            let mut offset = 0;
            for &d in &depth {
                config.push(flat[offset..offset + d].to_vec());
                offset += d;
            }
            let arch = DiscreteArch { depth: depth.clone(), config };
            let latency = discrete_latency(&arch, table);
            let score = discrete_score(&arch, objective);
            archs.push(ScoredArch { arch, latency, score });
            if !odometer(&mut flat, |_| 0, n) {
                break;
            }
        }
        if !odometer(&mut depth, |_| spec.min_depth, spec.max_depth + 1) {
            break;
        }
    }
    let mut best_feasible: Option<usize> = None;
    for (i, a) in archs.iter().enumerate() {
        if a.latency <= budget + FEASIBILITY_TOL && best_feasible.is_none_or(|b| a.score > archs[b].score) {
            best_feasible = Some(i);
        }
    }
    Ok(EnumerationResult { archs, budget, best_feasible })
}

/// Advances `digits` (last digit fastest) with values in `[low, high)`.
/// Returns false after the last combination.
fn odometer(digits: &mut [usize], low: impl Fn(usize) -> usize, high: usize) -> bool {
    for i in (0..digits.len()).rev() {
        digits[i] += 1;
        if digits[i] < high {
            return true;
        }
        digits[i] = low(i);
    }
    false
}

/// Kendall tau-b and Spearman rho (Pearson correlation of average ranks).
pub fn rank_correlation(x: &[f64], y: &[f64]) -> Result<(f64, f64), OracleError> {
    if x.len() != y.len() {
        return Err(OracleError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(OracleError::TooShort(x.len()));
    }
    let n = x.len();
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].total_cmp(&x[j]) as i64;
            let dy = y[i].total_cmp(&y[j]) as i64;
            match (dx, dy) {
                (0, 0) => {}
                (0, _) => tie_x += 1,
                (_, 0) => tie_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let nx = (concordant + discordant + tie_y) as f64;
    let ny = (concordant + discordant + tie_x) as f64;
    if nx == 0.0 || ny == 0.0 {
        return Err(OracleError::Constant);
    }
    let tau = (concordant - discordant) as f64 / (nx * ny).sqrt();

    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    let rho = sxy / (sxx * syy).sqrt();
    Ok((tau.clamp(-1.0, 1.0), rho.clamp(-1.0, 1.0)))
}

/// 1-based ranks, ties sharing their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    /// `(best - found) / (best - worst)` over feasible architectures; 0 when
    /// they all score the same.
    pub normalized_gap: f64,
    /// Percentage of feasible architectures scoring at most `found`.
    pub percentile: f64,
    pub feasible: bool,
}

pub fn optimality_gap(found: &DiscreteArch, result: &EnumerationResult) -> Result<GapStats, OracleError> {
    let me = &result.archs[result.position(found).ok_or(OracleError::NotEnumerated)?];
    let feasible = me.latency <= result.budget + FEASIBILITY_TOL;
    let scores: Vec<f64> = result.feasible().map(|a| a.score).collect();
    if scores.is_empty() {
        return Ok(GapStats { normalized_gap: f64::NAN, percentile: f64::NAN, feasible });
    }
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let worst = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let normalized_gap = if best > worst { (best - me.score) / (best - worst) } else { 0.0 };
    let at_most = scores.iter().filter(|&&s| s <= me.score).count();
    Ok(GapStats { normalized_gap, percentile: 100.0 * at_most as f64 / scores.len() as f64, feasible })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latency::generate_table;
    use crate::objective::generate_utilities;

    #[test]
    fn correlation_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(rank_correlation(&a, &a).unwrap(), (1.0, 1.0));
        let r = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(rank_correlation(&a, &r).unwrap(), (-1.0, -1.0));
        let (tau, rho) = rank_correlation(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((tau - 2.0 / 3.0).abs() < 1e-15);
        assert!((rho - 0.8).abs() < 1e-15);
    }

    #[test]
    fn correlation_errors() {
        assert!(matches!(rank_correlation(&[1.0], &[1.0]), Err(OracleError::TooShort(1))));
        assert!(matches!(rank_correlation(&[1.0, 2.0], &[1.0]), Err(OracleError::LengthMismatch(2, 1))));
        assert!(matches!(rank_correlation(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(OracleError::Constant)));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn enumeration_order_and_size() {
        let spec = SpaceSpec::with_config_count(2, 3, 2, 3).unwrap();
        let table = generate_table(&spec, 1, 0.1);
        let obj = ObjectiveSpec::linear(generate_utilities(&spec, 1, 0.1));
        let e = enumerate(&spec, &table, &obj, f64::INFINITY).unwrap();
        assert_eq!(e.archs.len(), 1296);
        assert_eq!(e.archs[0].arch, DiscreteArch { depth: vec![2, 2], config: vec![vec![0, 0], vec![0, 0]] });
        assert_eq!(e.archs[1].arch.config, vec![vec![0, 0], vec![0, 1]]);
        let last = &e.archs.last().unwrap().arch;
        assert_eq!(last.depth, vec![3, 3]);
        let best = e.best_feasible.unwrap();
        assert!(e.archs.iter().all(|a| a.score <= e.archs[best].score));
    }

    #[test]
    fn too_large_is_reported() {
        let spec = SpaceSpec::with_config_count(5, 4, 2, 12).unwrap();
        let table = generate_table(&spec, 1, 0.1);
        let obj = ObjectiveSpec::linear(generate_utilities(&spec, 1, 0.1));
        assert!(matches!(enumerate(&spec, &table, &obj, 1.0), Err(OracleError::TooLarge(_))));
    }
}
