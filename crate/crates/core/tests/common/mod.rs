#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmab::heuristics::SelectorConfig;
use rmab::index::Direction;
use rmab::model::{ActionVector, ArmSpec, JointState, RewardDist, ACTIVE, PASSIVE};
use rmab::prob::{exact_satisfaction_prob, reaches, SelectionContext, DEFAULT_ENUMERATION_CAP};

pub fn random_row<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

pub fn random_reward<R: Rng>(rng: &mut R) -> RewardDist {
    let p = rng.gen_range(0.05..1.0);
    let v = rng.gen_range(0.0..3.0);
    if rng.gen_bool(0.5) {
        RewardDist::bernoulli(p, v).unwrap()
    } else {
        RewardDist::new(vec![(v, p), (v * 0.5, 1.0 - p)]).unwrap()
    }
}

/// Dense random arm with nonnegative rewards and positive cost.
pub fn random_arm<R: Rng>(rng: &mut R, n_states: usize, id: usize) -> ArmSpec {
    let transition = (0..n_states)
        .map(|_| [random_row(rng, n_states), random_row(rng, n_states)])
        .collect();
    let reward = (0..n_states)
        .map(|_| [random_reward(rng), random_reward(rng)])
        .collect();
    ArmSpec::from_dense(id, transition, reward, rng.gen_range(0.2..2.0)).unwrap()
}

pub fn immediate(arm: &ArmSpec, s: usize, a: usize, lambda: f64, dir: Direction) -> f64 {
    let r = arm.reward(s, a).mean();
    let c = arm.cost(a == ACTIVE);
    match dir {
        Direction::Max => r - lambda * c,
        Direction::Min => lambda * r - c,
    }
}

fn transition_matrix(arm: &ArmSpec, policy: &[usize]) -> DMatrix<f64> {
    let n = arm.num_states();
    let mut p = DMatrix::zeros(n, n);
    for (s, &a) in policy.iter().enumerate() {
        for &(t, q) in arm.transitions(s, a) {
            p[(s, t)] += q;
        }
    }
    p
}

/// Value of a stationary deterministic policy by a direct linear solve.
pub fn policy_value(
    arm: &ArmSpec,
    beta: f64,
    lambda: f64,
    dir: Direction,
    policy: &[usize],
) -> Vec<f64> {
    let n = arm.num_states();
    let p = transition_matrix(arm, policy);
    let r = DVector::from_iterator(
        n,
        policy
            .iter()
            .enumerate()
            .map(|(s, &a)| immediate(arm, s, a, lambda, dir)),
    );
    let m = DMatrix::identity(n, n) - p * beta;
    m.lu()
        .solve(&r)
        .expect("I - beta P is invertible")
        .iter()
        .copied()
        .collect()
}

/// Optimal Q-values by enumerating all `2^S` stationary deterministic
/// policies; one policy attains the optimum in every state at once.
pub fn brute_force_q(arm: &ArmSpec, beta: f64, lambda: f64, dir: Direction) -> Vec<[f64; 2]> {
    let n = arm.num_states();
    let mut best = vec![f64::NEG_INFINITY; n];
    for mask in 0..(1usize << n) {
        let policy: Vec<usize> = (0..n).map(|s| (mask >> s) & 1).collect();
        let v = policy_value(arm, beta, lambda, dir, &policy);
        for s in 0..n {
            best[s] = best[s].max(v[s]);
        }
    }
    (0..n)
        .map(|s| {
            let q = |a: usize| {
                immediate(arm, s, a, lambda, dir)
                    + beta
                        * arm
                            .transitions(s, a)
                            .iter()
                            .map(|&(t, p)| p * best[t])
                            .sum::<f64>()
            };
            [q(PASSIVE), q(ACTIVE)]
        })
        .collect()
}

pub struct Case {
    pub arms: Vec<ArmSpec>,
    pub state: JointState,
    pub cfg: SelectorConfig,
}

/// Random small instance for guard checks; `unit_costs` forces cost 1.
pub fn random_case(seed: u64, unit_costs: bool) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=6);
    let states = rng.gen_range(1..=2);
    let arms: Vec<ArmSpec> = (0..n)
        .map(|i| {
            let arm = random_arm(&mut rng, states, i);
            if unit_costs {
                ArmSpec::new(
                    i,
                    (0..states)
                        .map(|s| {
                            [
                                arm.transitions(s, 0).to_vec(),
                                arm.transitions(s, 1).to_vec(),
                            ]
                        })
                        .collect(),
                    (0..states)
                        .map(|s| [arm.reward(s, 0).clone(), arm.reward(s, 1).clone()])
                        .collect(),
                    1.0,
                )
                .unwrap()
            } else {
                arm
            }
        })
        .collect();
    let state = JointState((0..n).map(|_| rng.gen_range(0..states)).collect());
    let cfg = SelectorConfig::new(rng.gen_range(0.05..0.99), rng.gen_range(0.1..4.0));
    Case { arms, state, cfg }
}

pub fn satisfaction(case: &Case, action: &ActionVector) -> f64 {
    let ctx = SelectionContext::for_action(&case.arms, &case.state, action, case.cfg.threshold);
    exact_satisfaction_prob(&ctx, DEFAULT_ENUMERATION_CAP).unwrap()
}

pub fn guard_sound(case: &Case, action: &ActionVector) -> bool {
    action.is_all_active() || reaches(satisfaction(case, action), case.cfg.rho)
}
