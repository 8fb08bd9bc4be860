//! Probability that the realized rewards of the selected arms reach the
//! threshold, at the arms' current states.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{meets_threshold, ActionVector, ArmSpec, JointState, RewardDist, ACTIVE};

pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;
pub const DEFAULT_MC_SAMPLES: usize = 1000;

/// Active reward distributions of the selected arms and the threshold.
#[derive(Clone, Debug)]
pub struct SelectionContext<'a> {
    pub rewards: Vec<&'a RewardDist>,
    pub threshold: f64,
}

impl<'a> SelectionContext<'a> {
    pub fn new(rewards: Vec<&'a RewardDist>, threshold: f64) -> Self {
        SelectionContext { rewards, threshold }
    }

    /// Context for the arms listed in `selected`, each at its state in `state`.
    pub fn for_arms(
        arms: &'a [ArmSpec],
        state: &JointState,
        selected: impl IntoIterator<Item = usize>,
        threshold: f64,
    ) -> Self {
        let rewards = selected
            .into_iter()
            .map(|i| arms[i].reward(state.0[i], ACTIVE))
            .collect();
        SelectionContext { rewards, threshold }
    }

    pub fn for_action(
        arms: &'a [ArmSpec],
        state: &JointState,
        action: &ActionVector,
        threshold: f64,
    ) -> Self {
        Self::for_arms(arms, state, action.selected(), threshold)
    }
}

/// Exact probability via dynamic programming over distinct partial sums.
///
/// A partial sum is settled early when the smallest possible remainder already
/// reaches the threshold, or dropped when the largest possible remainder
/// cannot. `cap` bounds the number of unsettled partial sums held at once.
pub fn exact_satisfaction_prob(ctx: &SelectionContext<'_>, cap: usize) -> Result<f64> {
    let n = ctx.rewards.len();
    let mut suffix_min = vec![0.0; n + 1];
    let mut suffix_max = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix_min[i] = suffix_min[i + 1] + ctx.rewards[i].min();
        suffix_max[i] = suffix_max[i + 1] + ctx.rewards[i].max();
    }
    let mut settled = 0.0;
    let mut live: HashMap<u64, f64> = HashMap::new();
    live.insert(0f64.to_bits(), 1.0);
    for i in 0..=n {
        let mut keep = HashMap::with_capacity(live.len());
        for (bits, p) in live {
            let partial = f64::from_bits(bits);
            if meets_threshold(partial + suffix_min[i], ctx.threshold) {
                settled += p;
            } else if meets_threshold(partial + suffix_max[i], ctx.threshold) {
                keep.insert(bits, p);
            }
        }
        if i == n || keep.is_empty() {
            break;
        }
        let mut next: HashMap<u64, f64> = HashMap::with_capacity(keep.len() * 2);
        for (bits, p) in keep {
            let partial = f64::from_bits(bits);
            for &(v, q) in ctx.rewards[i].outcomes() {
                *next.entry((partial + v).to_bits()).or_insert(0.0) += p * q;
            }
        }
        if next.len() > cap {
            return Err(Error::Capacity(format!(
                "{} partial sums exceed the enumeration cap {cap}; use the Monte Carlo estimator",
                next.len()
            )));
        }
        live = next;
    }
    Ok(settled.clamp(0.0, 1.0))
}

/// Fraction of `samples` joint draws whose sum reaches the threshold.
pub fn mc_satisfaction_prob<R: Rng + ?Sized>(
    ctx: &SelectionContext<'_>,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::arg("at least one sample is required"));
    }
    let mut hits = 0usize;
    for _ in 0..samples {
        let total: f64 = ctx.rewards.iter().map(|d| d.sample(rng)).sum();
        if meets_threshold(total, ctx.threshold) {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples as f64)
}

/// Hoeffding lower bound `1 - exp(-2(mu-R)^2 / sum (u-l)^2)` when the mean sum
/// exceeds the threshold, else 0. Valid but often loose.
pub fn hoeffding_lower_bound(ctx: &SelectionContext<'_>) -> Result<f64> {
    let mut mu = 0.0;
    let mut spread = 0.0;
    for d in &ctx.rewards {
        let (lo, hi) = (d.min(), d.max());
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::arg("reward support must be bounded"));
        }
        mu += d.mean();
        spread += (hi - lo) * (hi - lo);
    }
    if mu <= ctx.threshold {
        return Ok(0.0);
    }
    if spread == 0.0 {
        return Ok(1.0);
    }
    let gap = mu - ctx.threshold;
    Ok((1.0 - (-2.0 * gap * gap / spread).exp()).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    /// Exact when within the cap, Monte Carlo otherwise.
    Exact,
    Mc,
    Hoeffding,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(EstimatorKind::Exact),
            "mc" => Ok(EstimatorKind::Mc),
            "hoeffding" => Ok(EstimatorKind::Hoeffding),
            _ => Err(Error::arg(format!("unknown probability estimator {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbEstimator {
    pub kind: EstimatorKind,
    pub cap: usize,
    pub mc_samples: usize,
}

impl Default for ProbEstimator {
    fn default() -> Self {
        ProbEstimator {
            kind: EstimatorKind::Exact,
            cap: DEFAULT_ENUMERATION_CAP,
            mc_samples: DEFAULT_MC_SAMPLES,
        }
    }
}

impl ProbEstimator {
    pub fn of_kind(kind: EstimatorKind) -> Self {
        ProbEstimator {
            kind,
            ..Default::default()
        }
    }

    pub fn estimate<R: Rng + ?Sized>(
        &self,
        ctx: &SelectionContext<'_>,
        rng: &mut R,
    ) -> Result<f64> {
        match self.kind {
            EstimatorKind::Exact => match exact_satisfaction_prob(ctx, self.cap) {
                Err(Error::Capacity(_)) => mc_satisfaction_prob(ctx, self.mc_samples, rng),
                other => other,
            },
            EstimatorKind::Mc => mc_satisfaction_prob(ctx, self.mc_samples, rng),
            EstimatorKind::Hoeffding => hoeffding_lower_bound(ctx),
        }
    }
}

/// `p >= rho`, allowing for rounding in probabilities that should equal 1.
pub fn reaches(p: f64, rho: f64) -> bool {
    p >= rho - 1e-12
}
