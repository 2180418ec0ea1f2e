mod common;

use hcnas::latency::generate_table;
use hcnas::objective::generate_utilities;
use hcnas::{
    build_theta, discrete_latency, enumerate, expected_latency, from_discrete, gumbel_sample, to_discrete,
    ObjectiveSpec, SampleMode, SpaceSpec,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn theta_form_matches_direct_sum_on_full_space() {
    let spec = SpaceSpec::with_config_count(5, 4, 2, 12).unwrap();
    let table = generate_table(&spec, 21, 0.1);
    let theta = build_theta(&table, &spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..100 {
        let p = common::random_params(&mut rng, &spec, i % 2 == 0);
        let bilinear = theta.bilinear(p.alpha(), p.beta());
        let direct = common::quadruple_sum(&p, &table);
        assert!((bilinear - direct).abs() <= 1e-10, "{bilinear} vs {direct}");
        assert!((expected_latency(&p, &table).unwrap() - direct).abs() <= 1e-10);
    }
}

#[test]
fn dense_theta_has_prefix_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = SpaceSpec::with_config_count(2, 3, 1, 2).unwrap();
    let table = common::scrambled_table(&mut rng, spec.shape());
    let theta = build_theta(&table, &spec).unwrap();
    let dense = theta.to_dense();
    let shape = spec.shape();
    for s in 0..2 {
        for b in 0..3 {
            for c in 0..2 {
                for s2 in 0..2 {
                    for k in 0..3 {
                        let expected = if s == s2 && b <= k { table.get(s, b, c) } else { 0.0 };
                        assert_eq!(dense[shape.alpha_index(s, b, c)][shape.beta_index(s2, k)], expected);
                    }
                }
            }
        }
    }
}

#[test]
fn monte_carlo_mean_matches_formula() {
    let spec = SpaceSpec::with_config_count(5, 4, 2, 12).unwrap();
    let table = generate_table(&spec, 8, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = common::random_params(&mut rng, &spec, false);
    let samples: Vec<f64> = (0..100_000)
        .map(|_| {
            let s = gumbel_sample(&p, 1.0, SampleMode::Hard, &mut rng).unwrap();
            discrete_latency(&to_discrete(&s.point).unwrap(), &table)
        })
        .collect();
    let (mean, se) = common::mean_and_stderr(&samples);
    let formula = expected_latency(&p, &table).unwrap();
    assert!((mean - formula).abs() <= 3.0 * se, "mean {mean} formula {formula} se {se}");
}

#[test]
fn discrete_latency_equals_expected_on_every_arch() {
    let spec = SpaceSpec::with_config_count(2, 3, 2, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let table = common::scrambled_table(&mut rng, spec.shape());
    let obj = ObjectiveSpec::linear(generate_utilities(&spec, 0, 0.1));
    let e = enumerate(&spec, &table, &obj, f64::INFINITY).unwrap();
    for a in &e.archs {
        let p = from_discrete(&a.arch, &spec).unwrap();
        assert_eq!(a.latency, discrete_latency(&a.arch, &table));
        assert_eq!(expected_latency(&p, &table).unwrap(), a.latency);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn bilinear_equivalence(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = common::random_spec(&mut rng, 5, 4, 8);
        let table = common::scrambled_table(&mut rng, spec.shape());
        let sparse: bool = rng.random();
        let p = common::random_params(&mut rng, &spec, sparse);
        let theta = build_theta(&table, &spec).unwrap();
        let bilinear = theta.bilinear(p.alpha(), p.beta());
        let direct = common::quadruple_sum(&p, &table);
        prop_assert!((bilinear - direct).abs() <= 1e-10 * (1.0 + bilinear));
    }

    #[test]
    fn latency_is_linear_in_each_block(seed in any::<u64>(), w in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = common::random_spec(&mut rng, 4, 4, 6);
        let table = common::scrambled_table(&mut rng, spec.shape());
        let p = common::random_params(&mut rng, &spec, false);
        let q = common::random_params(&mut rng, &spec, false);

        let mut mix = p.clone();
        for (m, (a, b)) in mix.alpha_mut().iter_mut().zip(p.alpha().iter().zip(q.alpha())) {
            *m = (1.0 - w) * a + w * b;
        }
        let mut q_alpha = p.clone();
        q_alpha.alpha_mut().copy_from_slice(q.alpha());
        let lhs = expected_latency(&mix, &table).unwrap();
        let rhs = (1.0 - w) * expected_latency(&p, &table).unwrap() + w * expected_latency(&q_alpha, &table).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));

        let mut mix = p.clone();
        for (m, (a, b)) in mix.beta_mut().iter_mut().zip(p.beta().iter().zip(q.beta())) {
            *m = (1.0 - w) * a + w * b;
        }
        let mut q_beta = p.clone();
        q_beta.beta_mut().copy_from_slice(q.beta());
        let lhs = expected_latency(&mix, &table).unwrap();
        let rhs = (1.0 - w) * expected_latency(&p, &table).unwrap() + w * expected_latency(&q_beta, &table).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn raising_one_entry_never_lowers_latency(seed in any::<u64>(), bump in 0.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = common::random_spec(&mut rng, 3, 4, 5);
        let shape = spec.shape();
        let table = common::scrambled_table(&mut rng, shape);
        let p = common::random_params(&mut rng, &spec, false);
        let (s, b, c) = (rng.random_range(0..shape.stages), rng.random_range(0..shape.max_depth), rng.random_range(0..shape.configs));
        let mut t = table.values().to_vec();
        t[shape.alpha_index(s, b, c)] += bump;
        let raised = hcnas::LatencyTable::new(shape, "raised", t).unwrap();
        let before = expected_latency(&p, &table).unwrap();
        let after = expected_latency(&p, &raised).unwrap();
        prop_assert!(after >= before);
        // Every entry has mass and the deepest depth always does too.
        if bump > 1e-6 {
            prop_assert!(after > before);
        }
    }
}
