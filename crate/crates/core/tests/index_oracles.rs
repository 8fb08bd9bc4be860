mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmab::belief::{tabularize, BeliefArm};
use rmab::index::*;
use rmab::instances::claim1_instance;
use rmab::model::ArmSpec;

#[test]
fn value_iteration_matches_policy_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for beta in [0.5, 0.9] {
        for trial in 0..20 {
            let arm = common::random_arm(&mut rng, 1 + trial % 3, trial);
            let lambda = rng.gen_range(0.0..3.0);
            for dir in [Direction::Max, Direction::Min] {
                let vf = solve_decoupled(&arm, lambda, beta, dir, 1e-9).unwrap();
                let oracle = common::brute_force_q(&arm, beta, lambda, dir);
                for (s, q) in oracle.iter().enumerate() {
                    for a in 0..2 {
                        assert!(
                            (vf.q(s, a) - q[a]).abs() < 1e-6,
                            "beta {beta} trial {trial} s {s} a {a}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn single_state_index_is_mean_reward() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let p = rng.gen_range(0.05..1.0);
        let r = rng.gen_range(0.1..20.0);
        let arm = ArmSpec::single_state_bernoulli(0, p, r, 1.0).unwrap();
        let lp = whittle_max(&arm, 0, 0.9, DEFAULT_TOL).unwrap();
        assert!((lp - p * r).abs() < 1e-5 * (p * r).max(1.0));
        let lm = whittle_min(&arm, 0, 0.9, DEFAULT_TOL).unwrap();
        assert!((lm * lp - 1.0).abs() < 1e-4);
    }
}

#[test]
fn claim_instance_closed_forms() {
    let inst = claim1_instance(51, 0.9, 2.0).unwrap();
    let table = IndexTable::compute(&inst.arms, inst.beta, DEFAULT_TOL).unwrap();
    for e in &table.entries {
        let (plus, minus) = if e.arm_id < 50 {
            (20.0, 0.05)
        } else {
            (2.0, 0.5)
        };
        assert!((e.lambda_plus - plus).abs() < 1e-4, "{e:?}");
        assert!((e.lambda_minus - minus).abs() < 1e-6, "{e:?}");
    }
}

fn three_state_arm() -> impl Strategy<Value = (ArmSpec, f64)> {
    (any::<u64>(), 0.01f64..20.0).prop_map(|(seed, lambda)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (common::random_arm(&mut rng, 3, 0), lambda)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn max_and_min_values_scale((arm, lambda) in three_state_arm()) {
        let tol = 1e-7;
        let vmax = solve_decoupled(&arm, lambda, 0.9, Direction::Max, tol).unwrap();
        let vmin = solve_decoupled(&arm, 1.0 / lambda, 0.9, Direction::Min, tol).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                let gap = (vmax.q(s, a) - lambda * vmin.q(s, a)).abs();
                prop_assert!(gap <= tol + lambda * tol, "gap {gap}");
            }
        }
    }

    #[test]
    fn duality_on_random_arms((arm, _) in three_state_arm(), s in 0usize..3) {
        let lp = whittle_max(&arm, s, 0.9, DEFAULT_TOL).unwrap();
        prop_assume!(lp > 0.0 && lp.is_finite());
        let lm = whittle_min_from_max(lp).unwrap();
        prop_assert_eq!(lm, 1.0 / lp);
        let direct = whittle_min(&arm, s, 0.9, DEFAULT_TOL).unwrap();
        // compare where both bisections carry their tolerance: the reciprocal
        // of a small lambda_plus amplifies its error by 1/lambda_plus^2
        let err_plus = (1.0 / direct - lp).abs();
        prop_assert!(err_plus <= 2e-5 * lp.max(1.0), "{} vs {}", direct, lm);
    }
}

/// Sign of `V(s,0) - V(s,1)` flips at most once along an ascending grid.
fn single_crossing(arm: &ArmSpec, beta: f64, grid: &[f64]) -> bool {
    (0..arm.num_states()).all(|s| {
        let signs: Vec<bool> = grid
            .iter()
            .map(|&l| {
                solve_decoupled(arm, l, beta, Direction::Max, 1e-8)
                    .unwrap()
                    .passive_preferred(s)
            })
            .collect();
        signs.windows(2).filter(|w| w[0] != w[1]).count() <= 1
    })
}

#[test]
fn indexable_arms_cross_once() {
    let single = ArmSpec::single_state_bernoulli(0, 0.4, 5.0, 1.0).unwrap();
    let grid: Vec<f64> = (0..50).map(|i| i as f64 * 4.0 / 49.0).collect();
    assert!(
        check_indexability(&single, 0.9, &grid)
            .unwrap()
            .indexable_on_grid
    );
    assert!(single_crossing(&single, 0.9, &grid));

    let hidden = tabularize(&BeliefArm::new(0.2, 0.8, 3.0, 1.0).unwrap(), 30, 0).unwrap();
    let grid = default_grid(&hidden, 64);
    assert!(
        check_indexability(&hidden, 0.9, &grid)
            .unwrap()
            .indexable_on_grid
    );
    assert!(single_crossing(&hidden, 0.9, &grid));
}

#[test]
fn qwi_toy_arms() {
    let toys = [(0.5, 2.0, 1.0), (1.0, 3.0, 1.0 / 3.0)];
    for (p, r, exact) in toys {
        let arm = ArmSpec::single_state_bernoulli(0, p, r, 1.0).unwrap();
        let close = (0..10)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let est = qwi_tabular(&arm, 0.9, 50_000, &QwiConfig::default(), &mut rng).unwrap();
                (est.lambda_minus[0] - exact).abs() <= 0.1 * exact
            })
            .count();
        assert!(close >= 8, "p {p} r {r}: {close}/10");
    }
}
