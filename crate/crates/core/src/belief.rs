//! Hidden two-state arms and their finite belief surrogates.
//!
//! The hidden chain moves from `x` to `1` with probability `p_{x1}` (`p01` or
//! `p11`). Playing the arm reveals the current hidden state and pays `r` when
//! it is 1. The surrogate arm tracks `(y, k)`: the last observed state and the
//! number of steps since that observation, capped at `K`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::whittle_max;
use crate::model::{ArmSpec, RewardDist, TransitionRow};

pub const DEFAULT_HORIZON_K: usize = 30;

fn default_cost() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefArm {
    pub p01: f64,
    pub p11: f64,
    pub r: f64,
    #[serde(default = "default_cost")]
    pub cost1: f64,
}

impl BeliefArm {
    pub fn new(p01: f64, p11: f64, r: f64, cost1: f64) -> Result<Self> {
        let arm = BeliefArm { p01, p11, r, cost1 };
        arm.validate(0)?;
        Ok(arm)
    }

    /// Checks the invariants, reporting violations against arm `id`.
    pub fn validate(&self, id: usize) -> Result<()> {
        for (name, p) in [("p01", self.p01), ("p11", self.p11)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invariant(
                    id,
                    format!("{name} must lie in (0,1), got {p}"),
                ));
            }
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::invariant(
                id,
                format!("r must be positive, got {}", self.r),
            ));
        }
        if !(self.cost1 >= 0.0 && self.cost1.is_finite()) {
            return Err(Error::invariant(
                id,
                format!("cost1 must be nonnegative, got {}", self.cost1),
            ));
        }
        Ok(())
    }

    /// Probability of moving to state 1 from hidden state `y`.
    pub fn p_to_one(&self, y: bool) -> f64 {
        if y {
            self.p11
        } else {
            self.p01
        }
    }

    /// Long-run probability of the hidden state being 1.
    pub fn stationary(&self) -> f64 {
        self.p01 / (1.0 - self.p11 + self.p01)
    }

    /// Expected active reward under the stationary belief.
    pub fn stationary_reward(&self) -> f64 {
        self.stationary() * self.r
    }

    fn passive(&self, omega: f64) -> f64 {
        omega * self.p11 + (1.0 - omega) * self.p01
    }
}

/// Belief together with the observation bookkeeping that produced it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeliefState {
    pub omega: f64,
    pub last_obs: Option<bool>,
    pub since_obs: usize,
}

impl BeliefState {
    pub fn stationary(arm: &BeliefArm) -> Self {
        BeliefState {
            omega: arm.stationary(),
            last_obs: None,
            since_obs: 0,
        }
    }

    /// Belief one step after observing hidden state `y`.
    pub fn observed(arm: &BeliefArm, y: bool) -> Self {
        BeliefState {
            omega: arm.p_to_one(y),
            last_obs: Some(y),
            since_obs: 1,
        }
    }
}

/// One-step belief update. An observation must be supplied exactly when the
/// arm is played.
pub fn belief_update(
    omega: f64,
    p01: f64,
    p11: f64,
    active: bool,
    observation: Option<bool>,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::arg(format!("belief must lie in [0,1], got {omega}")));
    }
    for p in [p01, p11] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::arg(format!("probability out of range: {p}")));
        }
    }
    match (active, observation) {
        (true, Some(y)) => Ok(if y { p11 } else { p01 }),
        (false, None) => Ok(omega * p11 + (1.0 - omega) * p01),
        (true, None) => Err(Error::arg("active action requires an observation")),
        (false, Some(_)) => Err(Error::arg("observation supplied with passive action")),
    }
}

/// Surrogate state index of `(y, k)` for horizon `horizon_k`; `k` is 1-based.
pub fn surrogate_index(y: bool, k: usize, horizon_k: usize) -> usize {
    usize::from(y) * horizon_k + (k.clamp(1, horizon_k) - 1)
}

/// Inverse of [`surrogate_index`].
pub fn surrogate_label(index: usize, horizon_k: usize) -> (bool, usize) {
    (index >= horizon_k, index % horizon_k + 1)
}

/// Beliefs of all surrogate states, indexed like [`surrogate_index`].
pub fn surrogate_beliefs(arm: &BeliefArm, horizon_k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * horizon_k);
    for y in [false, true] {
        let mut omega = arm.p_to_one(y);
        for k in 1..=horizon_k {
            if k == horizon_k && horizon_k >= 2 {
                out.push(arm.stationary());
            } else {
                out.push(omega);
            }
            omega = arm.passive(omega);
        }
    }
    out
}

/// Finite surrogate of a hidden arm with states `(y, k)`, `k = 1..K`.
///
/// Playing in `(y,k)` pays `r` with probability `omega(y,k)` and moves to
/// `(1,1)` or `(0,1)` according to the revealed state; resting moves to
/// `(y, min(k+1, K))`. At `k = K` the belief is the stationary probability
/// (for `K >= 2`).
pub fn tabularize(arm: &BeliefArm, horizon_k: usize, id: usize) -> Result<ArmSpec> {
    if horizon_k == 0 {
        return Err(Error::arg("horizon_k must be at least 1"));
    }
    arm.validate(id)?;
    let beliefs = surrogate_beliefs(arm, horizon_k);
    let fresh_one = surrogate_index(true, 1, horizon_k);
    let fresh_zero = surrogate_index(false, 1, horizon_k);
    let mut transition = Vec::with_capacity(2 * horizon_k);
    let mut reward = Vec::with_capacity(2 * horizon_k);
    for (s, &omega) in beliefs.iter().enumerate() {
        let (y, k) = surrogate_label(s, horizon_k);
        let rest: TransitionRow = vec![(surrogate_index(y, k + 1, horizon_k), 1.0)];
        let play: TransitionRow = vec![(fresh_one, omega), (fresh_zero, 1.0 - omega)];
        transition.push([rest, play]);
        reward.push([RewardDist::point(0.0), RewardDist::bernoulli(omega, arm.r)?]);
    }
    ArmSpec::new(id, transition, reward, arm.cost1)
}

/// Surrogate state matching a belief: the bookkeeping when present, else the
/// state whose belief is closest to `omega`.
pub fn surrogate_for(arm: &BeliefArm, belief: &BeliefState, horizon_k: usize) -> usize {
    if let Some(y) = belief.last_obs {
        return surrogate_index(y, belief.since_obs.max(1), horizon_k);
    }
    let beliefs = surrogate_beliefs(arm, horizon_k);
    let mut best = 0;
    for (s, &w) in beliefs.iter().enumerate() {
        if (w - belief.omega).abs() < (beliefs[best] - belief.omega).abs() {
            best = s;
        }
    }
    best
}

/// Max-direction index of a belief state, computed on the surrogate arm.
pub fn whittle_belief(
    arm: &BeliefArm,
    belief: &BeliefState,
    beta: f64,
    horizon_k: usize,
    tol: f64,
) -> Result<f64> {
    let spec = tabularize(arm, horizon_k, 0)?;
    whittle_max(&spec, surrogate_for(arm, belief, horizon_k), beta, tol)
}

/// A hidden arm in simulation: the true chain plus the surrogate state that a
/// policy is allowed to see.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenArm {
    pub arm: BeliefArm,
    pub horizon_k: usize,
    pub hidden: bool,
    pub surrogate: usize,
}

impl HiddenArm {
    /// Hidden state drawn from the stationary distribution; the surrogate
    /// starts at `(0, K)`, whose belief is stationary when `K >= 2`.
    pub fn start<R: Rng + ?Sized>(arm: BeliefArm, horizon_k: usize, rng: &mut R) -> Self {
        let hidden = rng.gen_bool(arm.stationary());
        HiddenArm {
            arm,
            horizon_k,
            hidden,
            surrogate: surrogate_index(false, horizon_k, horizon_k),
        }
    }

    /// Plays or rests once; returns the realized reward.
    pub fn advance<R: Rng + ?Sized>(&mut self, active: bool, rng: &mut R) -> f64 {
        let x = self.hidden;
        let reward = if active && x { self.arm.r } else { 0.0 };
        self.surrogate = if active {
            surrogate_index(x, 1, self.horizon_k)
        } else {
            let (y, k) = surrogate_label(self.surrogate, self.horizon_k);
            surrogate_index(y, k + 1, self.horizon_k)
        };
        self.hidden = rng.gen_bool(self.arm.p_to_one(x));
        reward
    }
}
