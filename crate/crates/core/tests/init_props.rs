mod common;

use hcnas::init::{balanced_init_detailed, smoothness, InnerQp, DEFAULT_TOL};
use hcnas::latency::generate_table;
use hcnas::{balanced_init, expected_latency, lightest_init, validate, ArchParams, Block, SpaceSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `2 L x` for the path Laplacian.
fn laplacian_term(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { x[i] - x[i - 1] } else { 0.0 };
            let right = if i + 1 < n { x[i] - x[i + 1] } else { 0.0 };
            2.0 * (left + right)
        })
        .collect()
}

/// KKT residual of an inner QP with multipliers recovered from its active
/// set: the budget multiplier from rows with two or more nonzeros (least
/// squares), or from the dual-feasibility interval when every row is one-hot.
fn kkt_residual(qp: &InnerQp) -> f64 {
    let x = &qp.solution;
    let c = &qp.costs;
    let cost: f64 = x.iter().zip(c).map(|(xg, cg)| xg.iter().zip(cg).map(|(a, b)| a * b).sum::<f64>()).sum();
    let slack = qp.budget - cost;
    let lx: Vec<Vec<f64>> = x.iter().map(|r| laplacian_term(r)).collect();
    let support: Vec<Vec<usize>> = x.iter().map(|r| (0..r.len()).filter(|&i| r[i] > 0.0).collect()).collect();

    let lambda = if slack > 1e-9 {
        0.0
    } else {
        // Differences within a row eliminate its simplex multiplier.
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (g, sup) in support.iter().enumerate() {
            for w in sup.windows(2) {
                rows.push(c[g][w[1]] - c[g][w[0]]);
                rhs.push(-(lx[g][w[1]] - lx[g][w[0]]));
            }
        }
        if rows.iter().any(|r| r.abs() > 1e-12) {
            let a = DMatrix::from_column_slice(rows.len(), 1, &rows);
            let b = DVector::from_vec(rhs);
            a.svd(true, true).solve(&b, 1e-14).unwrap()[0]
        } else {
            // mu_i = (lx_i + lambda c_i) - (lx_j + lambda c_j) >= 0 for every zero i.
            let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
            for (g, sup) in support.iter().enumerate() {
                let j = sup[0];
                for i in 0..x[g].len() {
                    if x[g][i] > 0.0 {
                        continue;
                    }
                    let dc = c[g][i] - c[g][j];
                    let dl = lx[g][i] - lx[g][j];
                    if dc > 0.0 {
                        lo = lo.max(-dl / dc);
                    } else if dc < 0.0 {
                        hi = hi.min(-dl / dc);
                    }
                }
            }
            if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                lo + 1.0
            }
        }
    };

    let mut residual = (-lambda).max(0.0);
    if qp.budget.is_finite() {
        residual = residual.max((lambda * slack).abs()).max((-slack).max(0.0));
    }
    for (g, row) in x.iter().enumerate() {
        residual = residual.max((row.iter().sum::<f64>() - 1.0).abs());
        let grad: Vec<f64> = (0..row.len()).map(|i| lx[g][i] + lambda * c[g][i]).collect();
        let nu = support[g].iter().map(|&i| grad[i]).sum::<f64>() / support[g].len() as f64;
        for i in 0..row.len() {
            residual = residual.max((-row[i]).max(0.0));
            if row[i] > 0.0 {
                residual = residual.max((grad[i] - nu).abs());
            } else {
                residual = residual.max((nu - grad[i]).max(0.0));
            }
        }
    }
    residual
}

/// Triples `(s, b, c)` that a sampled path can reach: config mass times the
/// probability that the stage is deeper than `b`.
fn reachable_triples(p: &ArchParams) -> usize {
    let shape = p.shape();
    let mut count = 0;
    for s in 0..shape.stages {
        for b in 0..shape.max_depth {
            let tail: f64 = p.beta_row(s)[b..].iter().sum();
            count += p.alpha_row(s, b).iter().filter(|&&a| a * tail > 0.0).count();
        }
    }
    count
}

/// Nonzeros of every row form a prefix of the (latency-sorted) row.
fn chains(p: &ArchParams) -> bool {
    let shape = p.shape();
    let prefix = |row: &[f64]| {
        let k = row.iter().position(|&v| v == 0.0).unwrap_or(row.len());
        row[k..].iter().all(|&v| v == 0.0)
    };
    let alpha_ok = p.alpha().chunks(shape.configs).all(prefix);
    let beta_ok = p.beta().chunks(shape.max_depth).all(|r| prefix(&r[p.min_depth() - 1..]));
    alpha_ok && beta_ok
}

fn instance(seed: u64) -> (SpaceSpec, hcnas::LatencyTable, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = common::random_spec(&mut rng, 4, 4, 6);
    let table = common::random_table(&mut rng, &spec);
    let lightest = expected_latency(&lightest_init(&spec, &table).unwrap(), &table).unwrap();
    let heaviest: f64 = table.values().iter().cloned().fold(0.0, f64::max) * (spec.num_stages * spec.max_depth) as f64;
    let budget = lightest + rng.random::<f64>() * (heaviest - lightest) * 0.5;
    (spec, table, lightest, budget)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn balanced_init_is_feasible_and_kkt(seed in any::<u64>()) {
        let (spec, table, _, budget) = instance(seed);
        let out = balanced_init_detailed(&spec, &table, budget, DEFAULT_TOL).unwrap();
        validate(&out.params, &spec).unwrap();
        prop_assert!(expected_latency(&out.params, &table).unwrap() <= budget + 1e-9);
        for qp in &out.subproblems {
            let r = kkt_residual(qp);
            prop_assert!(r <= 1e-6, "{:?} residual {r}", qp.block);
        }
        prop_assert!(out.rounds <= hcnas::init::MAX_ROUNDS);
    }

    #[test]
    fn balanced_is_smoother_than_lightest(seed in any::<u64>()) {
        let (spec, table, _, budget) = instance(seed);
        let total = |p: &ArchParams| { let (a, b) = smoothness(p); a + b };
        let balanced = balanced_init(&spec, &table, budget, DEFAULT_TOL).unwrap();
        let lightest = lightest_init(&spec, &table).unwrap();
        prop_assert!(total(&balanced) <= total(&lightest) + 1e-12);
    }

    #[test]
    fn monotone_tables_give_chains(seed in any::<u64>()) {
        let (spec, table, _, budget) = instance(seed);
        prop_assume!(table.is_monotone());
        let p = balanced_init(&spec, &table, budget, DEFAULT_TOL).unwrap();
        prop_assert!(chains(&p));
    }

    #[test]
    fn spare_budget_spreads_mass(seed in any::<u64>()) {
        let (spec, table, lightest, _) = instance(seed);
        let shape = spec.shape();
        prop_assume!(shape.configs > 1 || spec.max_depth > spec.min_depth);
        let swap = (0..shape.stages)
            .flat_map(|s| (0..spec.min_depth).map(move |b| (s, b)))
            .map(|(s, b)| {
                let mut row = table.row(s, b).to_vec();
                row.sort_by(f64::total_cmp);
                row.get(1).map_or(f64::INFINITY, |second| second - row[0])
            })
            .fold(f64::INFINITY, f64::min)
            .min(1.0);
        let balanced = balanced_init(&spec, &table, lightest + swap, DEFAULT_TOL).unwrap();
        let base = lightest_init(&spec, &table).unwrap();
        prop_assert!(reachable_triples(&balanced) > reachable_triples(&base));
    }
}

#[test]
fn unlimited_budget_is_row_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let spec = common::random_spec(&mut rng, 5, 4, 12);
        let table = common::random_table(&mut rng, &spec);
        let p = balanced_init(&spec, &table, f64::INFINITY, DEFAULT_TOL).unwrap();
        assert_eq!(p, ArchParams::uniform(&spec));
    }
}

#[test]
fn tight_budget_stays_at_lightest_latency() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..30 {
        let spec = common::random_spec(&mut rng, 4, 4, 6);
        let table = common::random_table(&mut rng, &spec);
        let lightest = expected_latency(&lightest_init(&spec, &table).unwrap(), &table).unwrap();
        let budget = lightest + 1e-7;
        let out = balanced_init_detailed(&spec, &table, budget, DEFAULT_TOL).unwrap();
        let latency = expected_latency(&out.params, &table).unwrap();
        assert!(latency <= budget + 1e-9);
        assert!((latency - lightest).abs() <= 1e-6);
        for qp in &out.subproblems {
            assert!(kkt_residual(qp) <= 1e-6, "{:?}", qp.block);
        }
    }
}

#[test]
fn beta_is_solved_first() {
    let spec = SpaceSpec::with_config_count(2, 4, 2, 4).unwrap();
    let table = generate_table(&spec, 1, 0.1);
    let out = balanced_init_detailed(&spec, &table, 100.0, DEFAULT_TOL).unwrap();
    assert_eq!(out.subproblems[0].block, Block::Beta);
    assert_eq!(out.subproblems[1].block, Block::Alpha);
}

