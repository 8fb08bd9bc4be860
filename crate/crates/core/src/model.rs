//! Domain model: arms, instances, joint states and one environment step.
//!
//! Every arm is a finite MDP with a binary action. Action `1` (active) pays the
//! arm's `cost1` and draws from the active reward distribution of the current
//! state; action `0` (passive) is free. Rewards are finite discrete
//! distributions, which keeps satisfaction probabilities exactly computable.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PASSIVE: usize = 0;
pub const ACTIVE: usize = 1;

/// Tolerance on probability rows and reward distributions.
pub const PROB_TOL: f64 = 1e-9;

/// Relative slack used whenever a realized or enumerated reward sum is
/// compared with the threshold.
const THRESHOLD_SLACK: f64 = 1e-9;

/// `sum >= threshold`, up to a relative slack of 1e-9.
pub fn meets_threshold(sum: f64, threshold: f64) -> bool {
    sum >= threshold - THRESHOLD_SLACK * threshold.abs().max(1.0)
}

/// A finite discrete reward distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardDist {
    outcomes: Vec<(f64, f64)>,
}

impl RewardDist {
    /// Builds a distribution from `(value, probability)` pairs.
    pub fn new(outcomes: Vec<(f64, f64)>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::arg("reward distribution has no outcomes"));
        }
        let mut total = 0.0;
        for &(v, p) in &outcomes {
            if !v.is_finite() {
                return Err(Error::arg(format!("reward value {v} is not finite")));
            }
            if !(0.0..=1.0 + PROB_TOL).contains(&p) {
                return Err(Error::arg(format!("reward probability {p} outside [0,1]")));
            }
            total += p;
        }
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::arg(format!(
                "reward probabilities sum to {total}, expected 1"
            )));
        }
        Ok(RewardDist { outcomes })
    }

    pub fn point(value: f64) -> Self {
        RewardDist {
            outcomes: vec![(value, 1.0)],
        }
    }

    /// `value` with probability `p`, zero otherwise.
    pub fn bernoulli(p: f64, value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::arg(format!("success probability {p} outside [0,1]")));
        }
        if p == 1.0 {
            return Ok(Self::point(value));
        }
        if p == 0.0 {
            return Ok(Self::point(0.0));
        }
        Self::new(vec![(value, p), (0.0, 1.0 - p)])
    }

    pub fn outcomes(&self) -> &[(f64, f64)] {
        &self.outcomes
    }

    pub fn mean(&self) -> f64 {
        self.outcomes.iter().map(|&(v, p)| v * p).sum()
    }

    /// Smallest value with positive probability.
    pub fn min(&self) -> f64 {
        self.support().fold(f64::INFINITY, f64::min)
    }

    /// Largest value with positive probability.
    pub fn max(&self) -> f64 {
        self.support().fold(f64::NEG_INFINITY, f64::max)
    }

    fn support(&self) -> impl Iterator<Item = f64> + '_ {
        self.outcomes
            .iter()
            .filter(|&&(_, p)| p > 0.0)
            .map(|&(v, _)| v)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(v, p) in &self.outcomes {
            acc += p;
            if u < acc {
                return v;
            }
        }
        // u landed in the rounding gap at the top of the cumulative sum
        self.outcomes
            .iter()
            .rev()
            .find(|&&(_, p)| p > 0.0)
            .map(|&(v, _)| v)
            .unwrap_or(0.0)
    }

    /// Applies `f` to every value, keeping the probabilities.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        RewardDist {
            outcomes: self.outcomes.iter().map(|&(v, p)| (f(v), p)).collect(),
        }
    }
}

/// Sparse transition row: `(next_state, probability)` pairs.
pub type TransitionRow = Vec<(usize, f64)>;

/// One finite-state arm with a binary action.
#[derive(Clone, Debug)]
pub struct ArmSpec {
    id: usize,
    transition: Vec<[TransitionRow; 2]>,
    reward: Vec<[RewardDist; 2]>,
    cost1: f64,
    fingerprint: OnceLock<u64>,
}

impl PartialEq for ArmSpec {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.transition == other.transition
            && self.reward == other.reward
            && self.cost1 == other.cost1
    }
}

impl ArmSpec {
    /// Builds an arm from sparse transition rows indexed `[state][action]`.
    pub fn new(
        id: usize,
        transition: Vec<[TransitionRow; 2]>,
        reward: Vec<[RewardDist; 2]>,
        cost1: f64,
    ) -> Result<Self> {
        let n = transition.len();
        if n == 0 {
            return Err(Error::invariant(id, "arm has no states"));
        }
        if reward.len() != n {
            return Err(Error::invariant(
                id,
                format!("{} reward rows for {n} states", reward.len()),
            ));
        }
        if !(cost1.is_finite() && cost1 >= 0.0) {
            return Err(Error::invariant(
                id,
                format!("cost1 must be nonnegative, got {cost1}"),
            ));
        }
        let mut transition = transition;
        for (s, rows) in transition.iter_mut().enumerate() {
            for (a, row) in rows.iter_mut().enumerate() {
                let mut total = 0.0;
                for &(next, p) in row.iter() {
                    if next >= n {
                        return Err(Error::invariant(
                            id,
                            format!("transition ({s},{a}) targets unknown state {next}"),
                        ));
                    }
                    if !(p.is_finite() && p >= 0.0) {
                        return Err(Error::invariant(
                            id,
                            format!("transition ({s},{a}) has probability {p}"),
                        ));
                    }
                    total += p;
                }
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(Error::invariant(
                        id,
                        format!("transition row ({s},{a}) sums to {total}"),
                    ));
                }
                row.retain(|&(_, p)| p > 0.0);
            }
        }
        for (s, rows) in reward.iter().enumerate() {
            for (a, dist) in rows.iter().enumerate() {
                let total: f64 = dist.outcomes().iter().map(|o| o.1).sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(Error::invariant(
                        id,
                        format!("reward distribution ({s},{a}) sums to {total}"),
                    ));
                }
            }
        }
        Ok(ArmSpec {
            id,
            transition,
            reward,
            cost1,
            fingerprint: OnceLock::new(),
        })
    }

    /// Builds an arm from dense transition rows indexed `[state][action][next]`.
    pub fn from_dense(
        id: usize,
        transition: Vec<[Vec<f64>; 2]>,
        reward: Vec<[RewardDist; 2]>,
        cost1: f64,
    ) -> Result<Self> {
        let n = transition.len();
        let mut sparse = Vec::with_capacity(n);
        for (s, rows) in transition.into_iter().enumerate() {
            let mut out: [TransitionRow; 2] = Default::default();
            for (a, row) in rows.into_iter().enumerate() {
                if row.len() != n {
                    return Err(Error::invariant(
                        id,
                        format!(
                            "transition row ({s},{a}) has length {}, expected {n}",
                            row.len()
                        ),
                    ));
                }
                out[a] = row.into_iter().enumerate().collect();
            }
            sparse.push(out);
        }
        Self::new(id, sparse, reward, cost1)
    }

    /// Single-state arm paying `value` with probability `p` when active.
    pub fn single_state_bernoulli(id: usize, p: f64, value: f64, cost1: f64) -> Result<Self> {
        Self::new(
            id,
            vec![[vec![(0, 1.0)], vec![(0, 1.0)]]],
            vec![[RewardDist::point(0.0), RewardDist::bernoulli(p, value)?]],
            cost1,
        )
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn with_id(mut self, id: usize) -> Self {
        self.id = id;
        self
    }

    pub fn num_states(&self) -> usize {
        self.transition.len()
    }

    pub fn cost1(&self) -> f64 {
        self.cost1
    }

    pub fn cost(&self, active: bool) -> f64 {
        if active {
            self.cost1
        } else {
            0.0
        }
    }

    pub fn transitions(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.transition[state][action]
    }

    pub fn reward(&self, state: usize, action: usize) -> &RewardDist {
        &self.reward[state][action]
    }

    /// Dense copy of one transition row.
    pub fn dense_row(&self, state: usize, action: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.num_states()];
        for &(next, p) in &self.transition[state][action] {
            row[next] += p;
        }
        row
    }

    /// Largest absolute reward value anywhere in the arm.
    pub fn max_abs_reward(&self) -> f64 {
        self.reward
            .iter()
            .flat_map(|r| r.iter())
            .flat_map(|d| d.outcomes().iter().map(|o| o.0.abs()))
            .fold(0.0, f64::max)
    }

    pub fn check_state(&self, state: usize) -> Result<()> {
        if state >= self.num_states() {
            return Err(Error::arg(format!(
                "state {state} out of range for arm {} with {} states",
                self.id,
                self.num_states()
            )));
        }
        Ok(())
    }

    /// Same transitions and cost, rewards passed through `f`.
    pub fn map_rewards(&self, f: impl Fn(f64) -> f64) -> ArmSpec {
        ArmSpec {
            id: self.id,
            transition: self.transition.clone(),
            reward: self
                .reward
                .iter()
                .map(|[p, a]| [p.map_values(&f), a.map_values(&f)])
                .collect(),
            cost1: self.cost1,
            fingerprint: OnceLock::new(),
        }
    }

    /// Content hash over transitions, rewards and cost; ignores the id.
    pub fn fingerprint(&self) -> u64 {
        *self.fingerprint.get_or_init(|| {
            let mut h = DefaultHasher::new();
            self.cost1.to_bits().hash(&mut h);
            self.transition.len().hash(&mut h);
            for (rows, rewards) in self.transition.iter().zip(&self.reward) {
                for a in 0..2 {
                    rows[a].len().hash(&mut h);
                    for &(next, p) in &rows[a] {
                        next.hash(&mut h);
                        p.to_bits().hash(&mut h);
                    }
                    for &(v, p) in rewards[a].outcomes() {
                        v.to_bits().hash(&mut h);
                        p.to_bits().hash(&mut h);
                    }
                }
            }
            h.finish()
        })
    }
}

/// Draws a reward for `(state, action)`.
pub fn sample_reward<R: Rng + ?Sized>(
    arm: &ArmSpec,
    state: usize,
    action: usize,
    rng: &mut R,
) -> Result<f64> {
    arm.check_state(state)?;
    if action > 1 {
        return Err(Error::arg(format!("action {action} is not binary")));
    }
    Ok(arm.reward(state, action).sample(rng))
}

/// Draws the successor of `(state, action)`.
pub fn sample_next<R: Rng + ?Sized>(
    arm: &ArmSpec,
    state: usize,
    action: usize,
    rng: &mut R,
) -> usize {
    let row = arm.transitions(state, action);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(next, p) in row {
        acc += p;
        if u < acc {
            return next;
        }
    }
    row.last().map(|&(next, _)| next).unwrap_or(state)
}

/// A full RMAB instance.
#[derive(Clone, Debug, PartialEq)]
pub struct RmabInstance {
    pub arms: Vec<ArmSpec>,
    pub beta: f64,
    pub threshold: f64,
    pub rho: f64,
}

impl RmabInstance {
    pub fn new(arms: Vec<ArmSpec>, beta: f64, threshold: f64, rho: f64) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::arg("instance needs at least one arm"));
        }
        check_beta(beta)?;
        check_rho(rho)?;
        if !threshold.is_finite() {
            return Err(Error::arg(format!("threshold {threshold} is not finite")));
        }
        Ok(RmabInstance {
            arms,
            beta,
            threshold,
            rho,
        })
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.arms.iter().map(ArmSpec::cost1).collect()
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::arg(format!("beta must lie in (0,1), got {beta}")));
    }
    Ok(())
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::arg(format!("rho must lie in (0,1], got {rho}")));
    }
    Ok(())
}

/// Per-arm state indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct JointState(pub Vec<usize>);

impl JointState {
    pub fn zeros(n: usize) -> Self {
        JointState(vec![0; n])
    }

    pub fn validate(&self, arms: &[ArmSpec]) -> Result<()> {
        if self.0.len() != arms.len() {
            return Err(Error::arg(format!(
                "joint state has {} entries for {} arms",
                self.0.len(),
                arms.len()
            )));
        }
        for (arm, &s) in arms.iter().zip(&self.0) {
            arm.check_state(s)?;
        }
        Ok(())
    }
}

/// Per-arm activation bits.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ActionVector(pub Vec<bool>);

impl ActionVector {
    pub fn passive(n: usize) -> Self {
        ActionVector(vec![false; n])
    }

    pub fn all_active(n: usize) -> Self {
        ActionVector(vec![true; n])
    }

    pub fn from_selected(n: usize, selected: &[usize]) -> Self {
        let mut a = Self::passive(n);
        for &i in selected {
            a.0[i] = true;
        }
        a
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_all_active(&self) -> bool {
        self.0.iter().all(|&b| b)
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }

    /// Total activation cost under the given per-arm active costs.
    pub fn cost(&self, costs: &[f64]) -> f64 {
        self.selected().map(|i| costs[i]).sum()
    }
}

/// Deterministic random streams for one episode: one for the policy and one
/// per arm, all derived from a single seed.
#[derive(Clone, Debug)]
pub struct EpisodeRng {
    pub policy: ChaCha8Rng,
    pub arms: Vec<ChaCha8Rng>,
}

impl EpisodeRng {
    pub fn new(seed: u64, n_arms: usize) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        EpisodeRng {
            policy: stream(0),
            arms: (0..n_arms as u64).map(|i| stream(i + 1)).collect(),
        }
    }
}

/// SplitMix64 finalizer over `(base, k)`; used to derive per-repetition seeds.
pub fn derive_seed(base: u64, k: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(k.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Result of one joint step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: JointState,
    pub rewards: Vec<f64>,
    pub total_cost: f64,
}

/// Advances every arm once. Each arm draws its reward and then its successor
/// from its own stream.
pub fn step(
    instance: &RmabInstance,
    state: &JointState,
    action: &ActionVector,
    rng: &mut EpisodeRng,
) -> Result<StepOutcome> {
    step_arms(&instance.arms, state, action, rng)
}

pub(crate) fn step_arms(
    arms: &[ArmSpec],
    state: &JointState,
    action: &ActionVector,
    rng: &mut EpisodeRng,
) -> Result<StepOutcome> {
    state.validate(arms)?;
    if action.len() != arms.len() {
        return Err(Error::arg(format!(
            "action vector has {} entries for {} arms",
            action.len(),
            arms.len()
        )));
    }
    if rng.arms.len() < arms.len() {
        return Err(Error::arg("fewer random streams than arms"));
    }
    let mut next = Vec::with_capacity(arms.len());
    let mut rewards = Vec::with_capacity(arms.len());
    let mut total_cost = 0.0;
    for (i, arm) in arms.iter().enumerate() {
        let a = usize::from(action.0[i]);
        let s = state.0[i];
        let stream = &mut rng.arms[i];
        rewards.push(arm.reward(s, a).sample(stream));
        next.push(sample_next(arm, s, a, stream));
        total_cost += arm.cost(action.0[i]);
    }
    Ok(StepOutcome {
        next: JointState(next),
        rewards,
        total_cost,
    })
}

/// `sum_t beta^(t-1) * values[t]`, with the first term undiscounted.
pub fn discounted_sum(values: &[f64], beta: f64) -> f64 {
    let mut weight = 1.0;
    let mut total = 0.0;
    for &v in values {
        total += weight * v;
        weight *= beta;
    }
    total
}
