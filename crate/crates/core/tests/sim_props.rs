mod common;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmab::heuristics::{IndexCache, PolicyKind, SelectorConfig};
use rmab::index::DEFAULT_TOL;
use rmab::model::{ArmSpec, RmabInstance};
use rmab::sim::*;

fn unit_cost_instance(seed: u64, n: usize) -> RmabInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arms = (0..n)
        .map(|i| {
            let p = rng.gen_range(0.2..0.9);
            let q = rng.gen_range(0.2..0.9);
            ArmSpec::from_dense(
                i,
                vec![
                    [vec![p, 1.0 - p], vec![q, 1.0 - q]],
                    [vec![q, 1.0 - q], vec![p, 1.0 - p]],
                ],
                vec![
                    [
                        rmab::model::RewardDist::point(0.0),
                        rmab::model::RewardDist::bernoulli(p, 1.0).unwrap(),
                    ],
                    [
                        rmab::model::RewardDist::point(0.0),
                        rmab::model::RewardDist::bernoulli(q, 2.0).unwrap(),
                    ],
                ],
                1.0,
            )
            .unwrap()
        })
        .collect();
    RmabInstance::new(arms, 0.9, 2.0, 0.8).unwrap()
}

fn experiment(
    inst: &RmabInstance,
    kinds: &[PolicyKind],
    reps: usize,
    seed: u64,
) -> Vec<PolicyRuns> {
    let cfg = SelectorConfig::new(inst.rho, inst.threshold);
    let cache = Arc::new(IndexCache::new(inst.beta, DEFAULT_TOL).unwrap());
    let specs = standard_policies(kinds, cfg, cache).unwrap();
    let scenario = |_| Ok(Scenario::observed(inst.clone()));
    run_experiment(&scenario, &specs, reps, 10, seed).unwrap()
}

#[test]
fn greedy_violation_rate_within_binomial_band() {
    let inst = unit_cost_instance(4, 8);
    let res = experiment(&inst, &[PolicyKind::GreedyMin], 200, 1);
    let agg = &res[0].aggregate;
    let trials = (200 * 10) as f64;
    let sigma = (inst.rho * (1.0 - inst.rho) / trials).sqrt();
    assert!(
        agg.violation_rate <= 1.0 - inst.rho + 3.0 * sigma,
        "{agg:?}"
    );
}

#[test]
fn guard_sound_policies_cost_no_more_than_all_active() {
    for seed in 0..5 {
        let inst = unit_cost_instance(seed, 6);
        let kinds = [
            PolicyKind::GreedyMin,
            PolicyKind::IncreasingBudget,
            PolicyKind::TruncatedReward,
            PolicyKind::Random,
            PolicyKind::AllActive,
        ];
        let res = experiment(&inst, &kinds, 5, seed);
        let all = res.last().unwrap();
        for pr in &res {
            for (run, full) in pr.runs.iter().zip(&all.runs) {
                assert!(
                    run.discounted_cost <= full.discounted_cost + 1e-9,
                    "{}",
                    pr.aggregate.policy
                );
            }
        }
    }
}

#[test]
fn experiments_are_reproducible_and_csv_stable() {
    let inst = unit_cost_instance(9, 5);
    let kinds = [PolicyKind::GreedyMin, PolicyKind::Random];
    let csv = |res: &[PolicyRuns]| {
        let (mut runs, mut agg) = (Vec::new(), Vec::new());
        write_runs_csv(res, &mut runs).unwrap();
        write_aggregate_csv(res, &mut agg).unwrap();
        (
            String::from_utf8(runs).unwrap(),
            String::from_utf8(agg).unwrap(),
        )
    };
    let a = csv(&experiment(&inst, &kinds, 4, 42));
    let b = csv(&experiment(&inst, &kinds, 4, 42));
    assert_eq!(a, b);
    assert_eq!(a.0.lines().next().unwrap(), RUN_CSV_HEADER);
    assert_eq!(a.1.lines().next().unwrap(), AGGREGATE_CSV_HEADER);
    assert_eq!(a.0.lines().count(), 1 + 2 * 4 * 10);
    assert_eq!(a.1.lines().count(), 1 + 2);
    let c = csv(&experiment(&inst, &kinds, 4, 43));
    assert_ne!(a.0, c.0);
}
