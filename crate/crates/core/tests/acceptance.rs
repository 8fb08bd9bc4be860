mod common;

use std::panic;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmab::cli::ExperimentConfig;
use rmab::heuristics::*;
use rmab::index::*;
use rmab::instances::{claim1_instance, claim1_p};
use rmab::model::{ActionVector, ArmSpec, JointState, RewardDist};
use rmab::prob::*;
use rmab::reduction::{verify_reduction, ReductionParams, TmSpec};
use rmab::sim::PolicyRuns;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn claim_instance() -> Outcome {
    let inst = claim1_instance(51, 0.9, 1.0).map_err(|e| e.to_string())?;
    let p = claim1_p(51, 0.9).map_err(|e| e.to_string())?;
    let state = JointState::zeros(51);
    let unreliable = ActionVector::from_selected(51, &(0..50).collect::<Vec<_>>());
    let ctx = SelectionContext::for_action(&inst.arms, &state, &unreliable, 1.0);
    let sat = exact_satisfaction_prob(&ctx, DEFAULT_ENUMERATION_CAP).map_err(|e| e.to_string())?;
    let miss = (1.0 - p).powi(50);
    check(
        ((1.0 - sat) - miss).abs() <= 1e-9,
        format!("1 - P = {} vs (1-p)^50 = {miss}", 1.0 - sat),
    )?;
    check(miss > 0.1, format!("(1-p)^50 = {miss} not above 1 - rho"))?;

    let table =
        IndexTable::compute(&inst.arms, inst.beta, DEFAULT_TOL).map_err(|e| e.to_string())?;
    let cfg = SelectorConfig::new(inst.rho, inst.threshold);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let greedy =
        greedy_min(&inst.arms, &state, &table, &cfg, &mut rng).map_err(|e| e.to_string())?;
    check(
        greedy.is_all_active(),
        format!("greedy_min picked {} arms", greedy.count()),
    )?;
    let single = ActionVector::from_selected(51, &[50]);
    let ctx = SelectionContext::for_action(&inst.arms, &state, &single, 1.0);
    let sure = exact_satisfaction_prob(&ctx, DEFAULT_ENUMERATION_CAP).map_err(|e| e.to_string())?;
    check(sure == 1.0, format!("single arm satisfaction {sure}"))?;
    let costs = inst.costs();
    let ratio = greedy.cost(&costs) / single.cost(&costs);
    check(ratio >= 51.0, format!("cost ratio {ratio}"))?;
    Ok(format!(
        "(1-p)^50 = {miss:.6}, greedy_min cost {} vs 1, ratio {ratio}",
        greedy.cost(&costs)
    ))
}

fn index_closed_forms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (mut worst_plus, mut worst_dual, mut worst_direct) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let p = rng.gen_range(0.2..1.0);
        let r = rng.gen_range(1.0..10.0);
        let arm = ArmSpec::single_state_bernoulli(0, p, r, 1.0).map_err(|e| e.to_string())?;
        let lp = whittle_max(&arm, 0, 0.9, DEFAULT_TOL).map_err(|e| e.to_string())?;
        let lm = whittle_min_from_max(lp).map_err(|e| e.to_string())?;
        let direct = whittle_min(&arm, 0, 0.9, DEFAULT_TOL).map_err(|e| e.to_string())?;
        worst_plus = worst_plus.max((lp - p * r).abs());
        worst_dual = worst_dual.max((lp * lm - 1.0).abs());
        worst_direct = worst_direct.max((direct - lm).abs());
    }
    check(
        worst_plus <= 1e-5,
        format!("|lambda+ - pr| up to {worst_plus:e}"),
    )?;
    check(
        worst_dual <= 1e-6,
        format!("|lambda+ lambda- - 1| up to {worst_dual:e}"),
    )?;
    check(
        worst_direct <= 2e-5,
        format!("|min bisection - 1/lambda+| up to {worst_direct:e}"),
    )?;
    Ok(format!(
        "max errors: index {worst_plus:.1e}, duality {worst_dual:.1e}, min bisection {worst_direct:.1e}"
    ))
}

fn scaling_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let tol = DEFAULT_TOL;
    let mut worst = 0.0f64;
    for i in 0..50 {
        let arm = common::random_arm(&mut rng, 3, i);
        for _ in 0..5 {
            let lambda = 10f64.powf(rng.gen_range(-1.0..1.0));
            let vmax = solve_decoupled(&arm, lambda, 0.9, Direction::Max, tol)
                .map_err(|e| e.to_string())?;
            // lambda * V_min carries lambda times the error of V_min
            let vmin = solve_decoupled(&arm, 1.0 / lambda, 0.9, Direction::Min, tol / lambda)
                .map_err(|e| e.to_string())?;
            for s in 0..3 {
                for a in 0..2 {
                    worst = worst.max((vmax.q(s, a) - lambda * vmin.q(s, a)).abs());
                }
            }
        }
    }
    check(worst <= 2.0 * tol, format!("gap up to {worst:e}"))?;
    Ok(format!("max gap {worst:.1e} over 250 (arm, lambda) pairs"))
}

fn small_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let arm = common::random_arm(&mut rng, 1 + i % 3, i);
        let lambda = rng.gen_range(0.0..3.0);
        for dir in [Direction::Max, Direction::Min] {
            let vf =
                solve_decoupled(&arm, lambda, 0.5, dir, DEFAULT_TOL).map_err(|e| e.to_string())?;
            for (s, q) in common::brute_force_q(&arm, 0.5, lambda, dir)
                .iter()
                .enumerate()
            {
                for a in 0..2 {
                    worst = worst.max((vf.q(s, a) - q[a]).abs());
                }
            }
        }
    }
    check(worst <= 1e-5, format!("deviation up to {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn experiment(family: &str, policies: &str) -> Result<Vec<PolicyRuns>, String> {
    let cfg = ExperimentConfig {
        family: Some(family.into()),
        n: Some(20),
        rho: Some(0.9),
        threshold: Some(5.0),
        beta: Some(0.9),
        seed: Some(2024),
        horizon: Some(10),
        reps: Some(10),
        policies: Some(policies.into()),
        ..Default::default()
    };
    cfg.run().map_err(|e| e.to_string())
}

fn adversarial_ordering() -> Outcome {
    let res = experiment(
        "adversarial",
        "greedy_min,increasing_budget,truncated_reward",
    )?;
    let (greedy, budget, truncated) = (&res[0], &res[1], &res[2]);
    let g = greedy.aggregate.mean_cost;
    let t = truncated.aggregate.mean_cost;
    check(
        t < g,
        format!("truncated_reward {t:.3} not below greedy_min {g:.3}"),
    )?;
    check(
        greedy.runs == budget.runs,
        "greedy_min and increasing_budget trajectories differ",
    )?;
    Ok(format!(
        "truncated_reward {t:.3} < greedy_min {g:.3}; increasing_budget identical on 10 runs"
    ))
}

fn uniform_ordering() -> Outcome {
    let res = experiment("uniform", "greedy_min,random,all_active,truncated_reward")?;
    let g = &res[0].aggregate;
    let mut parts = vec![format!("greedy_min {:.3}", g.mean_cost)];
    for other in &res[1..] {
        let o = &other.aggregate;
        let pooled = ((g.std_cost.powi(2) + o.std_cost.powi(2)) / 2.0).sqrt();
        check(
            g.mean_cost <= o.mean_cost + pooled,
            format!(
                "greedy_min {:.3} above {} {:.3} + {pooled:.3}",
                g.mean_cost, o.policy, o.mean_cost
            ),
        )?;
        parts.push(format!("{} {:.3}", o.policy, o.mean_cost));
    }
    Ok(parts.join(", "))
}

fn estimators() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let samples = 100_000;
    let mut within = 0;
    for _ in 0..50 {
        let k = rng.gen_range(1..=10);
        let rewards: Vec<RewardDist> = (0..k)
            .map(|_| {
                RewardDist::bernoulli(rng.gen_range(0.05..0.95), rng.gen_range(0.5..2.0)).unwrap()
            })
            .collect();
        let top: f64 = rewards.iter().map(RewardDist::max).sum();
        let threshold = rng.gen_range(0.0..top);
        let ctx = SelectionContext::new(rewards.iter().collect(), threshold);
        let exact =
            exact_satisfaction_prob(&ctx, DEFAULT_ENUMERATION_CAP).map_err(|e| e.to_string())?;
        let mc = mc_satisfaction_prob(&ctx, samples, &mut rng).map_err(|e| e.to_string())?;
        let hoeffding = hoeffding_lower_bound(&ctx).map_err(|e| e.to_string())?;
        check(
            hoeffding <= exact + 1e-12,
            format!("hoeffding {hoeffding} above exact {exact}"),
        )?;
        let sigma = (exact * (1.0 - exact) / samples as f64).sqrt();
        if (mc - exact).abs() <= 3.0 * sigma {
            within += 1;
        }
    }
    check(
        within >= 48,
        format!("Monte Carlo within 3 sigma in {within}/50"),
    )?;
    Ok(format!(
        "Monte Carlo within 3 sigma in {within}/50; Hoeffding never above exact"
    ))
}

fn reduction() -> Outcome {
    let params = ReductionParams::new(2.0);
    let mut parts = Vec::new();
    for (name, tm, horizon) in [
        ("halting", TmSpec::toy_halting(), 50),
        ("looping", TmSpec::toy_looping(), 20),
    ] {
        let rep = verify_reduction(&tm, &params, horizon).map_err(|e| e.to_string())?;
        check(
            rep.iff_holds,
            format!("{name}: cost ordering does not match halting"),
        )?;
        let simulated = rep.tm_halts_after.unwrap_or(horizon);
        check(
            rep.steps_checked == simulated && rep.tape_mismatches.is_empty(),
            format!("{name}: tape mismatches {:?}", rep.tape_mismatches),
        )?;
        let audit = &rep.perturbation;
        check(
            audit.missed.is_empty() && audit.detection_rate() == 1.0,
            format!("{name}: missed perturbations {:?}", audit.missed),
        )?;
        check(rep.all_ok(), format!("{name}: report not clean"))?;
        parts.push(format!(
            "{name}: faithful cost {:.3} vs special {:.3}, {} steps checked, {} perturbations caught",
            rep.faithful.discounted_cost,
            rep.special.discounted_cost,
            rep.steps_checked,
            audit.additive_detected + audit.replace_detected
        ));
    }
    Ok(parts.join("; "))
}

fn qwi() -> Outcome {
    let mut parts = Vec::new();
    for (p, r) in [(0.5, 2.0), (1.0, 3.0)] {
        let arm = ArmSpec::single_state_bernoulli(0, p, r, 1.0).map_err(|e| e.to_string())?;
        let exact = whittle_min_from_max(
            whittle_max(&arm, 0, 0.9, DEFAULT_TOL).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        let mut close = 0;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let est = qwi_tabular(&arm, 0.9, 50_000, &QwiConfig::default(), &mut rng)
                .map_err(|e| e.to_string())?;
            if (est.lambda_minus[0] - exact).abs() <= 0.1 * exact {
                close += 1;
            }
        }
        check(
            close >= 8,
            format!("p={p} r={r}: {close}/10 seeds within 10%"),
        )?;
        parts.push(format!("p={p} r={r}: {close}/10"));
    }
    Ok(parts.join(", "))
}

fn guard_soundness() -> Outcome {
    let kinds = [
        PolicyKind::GreedyMin,
        PolicyKind::IncreasingBudget,
        PolicyKind::TruncatedReward,
        PolicyKind::Random,
    ];
    for seed in 0..1000u64 {
        let case = common::random_case(seed, seed % 2 == 0);
        let cache = Arc::new(IndexCache::new(0.9, DEFAULT_TOL).map_err(|e| e.to_string())?);
        for kind in kinds {
            let mut policy =
                Selector::new(kind, case.cfg, cache.clone()).map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let action = policy
                .select(&case.arms, &case.state, &mut rng)
                .map_err(|e| e.to_string())?;
            check(
                common::guard_sound(&case, &action),
                format!("{kind} unsound on case {seed}"),
            )?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for i in 0..1000 {
        let n = rng.gen_range(0..12);
        let indices: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let costs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
        let budget = rng.gen_range(0.0..10.0);
        let spent = greedy_max(&indices, &costs, budget).cost(&costs);
        check(
            spent <= budget + 1e-12,
            format!("greedy_max case {i} spent {spent} of {budget}"),
        )?;
    }
    Ok("1000 instances x 4 heuristics guard-sound; greedy_max within budget on 1000 draws".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, u64); 10] = [
        ("claim instance cost ratio", claim_instance, 1),
        ("index closed forms and duality", index_closed_forms, 10),
        ("scaling identity", scaling_identity, 30),
        ("small-instance oracle", small_oracle, 30),
        ("adversarial family ordering", adversarial_ordering, 120),
        ("uniform family ordering", uniform_ordering, 120),
        ("probability estimators", estimators, 60),
        ("reduction dichotomy", reduction, 60),
        ("QWI convergence", qwi, 60),
        ("guard soundness", guard_soundness, 120),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(run).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > Duration::from_secs(limit) => {
                Err(format!("took {elapsed:.1?}, limit {limit}s"))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({elapsed:.2?})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} ({elapsed:.2?})", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
