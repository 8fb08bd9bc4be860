//! Per-step action selection: greedy selection under a budget, the greedy,
//! increasing-budget and truncated-reward minimization heuristics, and the
//! random and all-active baselines.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::index::{whittle_max, IndexTable};
use crate::model::{check_beta, check_rho, ActionVector, ArmSpec, JointState, ACTIVE};
use crate::prob::{reaches, ProbEstimator, SelectionContext};

/// Source of max-direction indices for `(arm, state)` pairs.
pub trait IndexProvider: Send + Sync {
    fn lambda_plus(&self, arm: &ArmSpec, state: usize) -> Result<f64>;
}

/// Computes indices on demand and remembers them. Arms with identical
/// dynamics, rewards and cost share entries regardless of their ids.
#[derive(Debug)]
pub struct IndexCache {
    beta: f64,
    tol: f64,
    base: Mutex<HashMap<(u64, usize), f64>>,
    truncated: Mutex<HashMap<(u64, u32, usize), f64>>,
}

impl IndexCache {
    pub fn new(beta: f64, tol: f64) -> Result<Self> {
        check_beta(beta)?;
        if !(tol > 0.0) {
            return Err(Error::arg("tolerance must be positive"));
        }
        Ok(IndexCache {
            beta,
            tol,
            base: Mutex::new(HashMap::new()),
            truncated: Mutex::new(HashMap::new()),
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Index of `state` after replacing every reward `r` by `min(r/2^tau, 1)`.
    pub fn truncated(&self, arm: &ArmSpec, tau: u32, state: usize) -> Result<f64> {
        let key = (arm.fingerprint(), tau, state);
        if let Some(&v) = self.truncated.lock().unwrap().get(&key) {
            return Ok(v);
        }
        let scale = 2f64.powi(tau as i32);
        let largest = arm_reward_max(arm);
        let value = if largest / scale <= 1.0 {
            // nothing is clipped, so the problem is a rescaling of the original
            self.lambda_plus(arm, state)? / scale
        } else {
            let clipped = arm.map_rewards(|r| (r / scale).min(1.0));
            self.lambda_plus(&clipped, state)?
        };
        self.truncated.lock().unwrap().insert(key, value);
        Ok(value)
    }
}

fn arm_reward_max(arm: &ArmSpec) -> f64 {
    let mut hi = f64::NEG_INFINITY;
    for s in 0..arm.num_states() {
        for a in 0..2 {
            hi = hi.max(arm.reward(s, a).max());
        }
    }
    hi
}

impl IndexProvider for IndexCache {
    fn lambda_plus(&self, arm: &ArmSpec, state: usize) -> Result<f64> {
        let key = (arm.fingerprint(), state);
        if let Some(&v) = self.base.lock().unwrap().get(&key) {
            return Ok(v);
        }
        let value = whittle_max(arm, state, self.beta, self.tol)?;
        self.base.lock().unwrap().insert(key, value);
        Ok(value)
    }
}

impl IndexProvider for IndexTable {
    fn lambda_plus(&self, arm: &ArmSpec, state: usize) -> Result<f64> {
        self.get(arm.id(), state)
            .map(|e| e.lambda_plus)
            .ok_or_else(|| Error::arg(format!("no index for arm {} state {state}", arm.id())))
    }
}

/// Greedy selection under budget `budget` among `candidates`: repeatedly take
/// the arm with the largest index whose cost fits what is left. Ties go to
/// the lower position in `candidates`. Returns the picks in selection order.
pub fn greedy_max_order(
    candidates: &[usize],
    indices: &[f64],
    costs: &[f64],
    budget: f64,
) -> Vec<usize> {
    let mut order: Vec<usize> = candidates.to_vec();
    order.sort_by(|&a, &b| indices[b].total_cmp(&indices[a]).then(a.cmp(&b)));
    let mut left = budget;
    let mut picked = Vec::new();
    for i in order {
        if costs[i] <= left + 1e-12 {
            left -= costs[i];
            picked.push(i);
        }
    }
    picked
}

/// Greedy selection over all arms with budget `budget`.
pub fn greedy_max(indices: &[f64], costs: &[f64], budget: f64) -> ActionVector {
    let all: Vec<usize> = (0..indices.len()).collect();
    ActionVector::from_selected(
        indices.len(),
        &greedy_max_order(&all, indices, costs, budget),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    GreedyMin,
    IncreasingBudget,
    TruncatedReward,
    Random,
    AllActive,
    GreedyMax,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::GreedyMin,
        PolicyKind::IncreasingBudget,
        PolicyKind::TruncatedReward,
        PolicyKind::Random,
        PolicyKind::AllActive,
        PolicyKind::GreedyMax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::GreedyMin => "greedy_min",
            PolicyKind::IncreasingBudget => "increasing_budget",
            PolicyKind::TruncatedReward => "truncated_reward",
            PolicyKind::Random => "random",
            PolicyKind::AllActive => "all_active",
            PolicyKind::GreedyMax => "greedy_max",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown policy {s:?}")))
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectorConfig {
    pub rho: f64,
    pub threshold: f64,
    /// Budget multiplier of the increasing-budget and truncated heuristics.
    pub m: f64,
    pub estimator: ProbEstimator,
    /// Carry the phase budget over to the next time step instead of
    /// restarting from the cheapest cost.
    pub persist_budget: bool,
    /// Check the stopping guard after every single addition within a budget
    /// phase rather than once per phase.
    pub guard_per_addition: bool,
    /// Budget of the stand-alone greedy-max policy.
    pub max_budget: f64,
}

impl SelectorConfig {
    pub fn new(rho: f64, threshold: f64) -> Self {
        SelectorConfig {
            rho,
            threshold,
            m: 2.0,
            estimator: ProbEstimator::default(),
            persist_budget: false,
            guard_per_addition: true,
            max_budget: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rho(self.rho)?;
        if !(self.m > 1.0) {
            return Err(Error::arg(format!(
                "budget multiplier must exceed 1, got {}",
                self.m
            )));
        }
        if !self.threshold.is_finite() {
            return Err(Error::arg("threshold must be finite"));
        }
        Ok(())
    }
}

/// A per-step action rule.
pub trait Policy {
    fn name(&self) -> String;

    /// Called at the start of every episode.
    fn reset(&mut self) {}

    fn select(
        &mut self,
        arms: &[ArmSpec],
        state: &JointState,
        rng: &mut ChaCha8Rng,
    ) -> Result<ActionVector>;
}

/// Tracks the current selection and evaluates the stopping guard on it.
struct Selection<'a> {
    arms: &'a [ArmSpec],
    state: &'a JointState,
    cfg: &'a SelectorConfig,
    chosen: Vec<bool>,
    order: Vec<usize>,
}

impl<'a> Selection<'a> {
    fn new(arms: &'a [ArmSpec], state: &'a JointState, cfg: &'a SelectorConfig) -> Self {
        Selection {
            arms,
            state,
            cfg,
            chosen: vec![false; arms.len()],
            order: Vec::new(),
        }
    }

    fn satisfied(&self, rng: &mut ChaCha8Rng) -> Result<bool> {
        let ctx = SelectionContext::for_arms(
            self.arms,
            self.state,
            self.order.iter().copied(),
            self.cfg.threshold,
        );
        Ok(reaches(
            self.cfg.estimator.estimate(&ctx, rng)?,
            self.cfg.rho,
        ))
    }

    /// The guard loop condition: keep going while unsatisfied and not full.
    fn done(&self, rng: &mut ChaCha8Rng) -> Result<bool> {
        Ok(self.full() || self.satisfied(rng)?)
    }

    fn full(&self) -> bool {
        self.order.len() == self.arms.len()
    }

    fn add(&mut self, i: usize) {
        debug_assert!(!self.chosen[i]);
        self.chosen[i] = true;
        self.order.push(i);
    }

    fn unselected(&self) -> Vec<usize> {
        (0..self.arms.len()).filter(|&i| !self.chosen[i]).collect()
    }

    /// Adds a phase's picks; returns true once the guard loop should stop.
    fn add_phase(&mut self, picks: &[usize], rng: &mut ChaCha8Rng) -> Result<bool> {
        if self.cfg.guard_per_addition {
            for &i in picks {
                self.add(i);
                if self.done(rng)? {
                    return Ok(true);
                }
            }
            Ok(self.full())
        } else {
            for &i in picks {
                self.add(i);
            }
            self.done(rng)
        }
    }

    fn finish(self) -> ActionVector {
        ActionVector(self.chosen)
    }
}

fn current_indices(
    provider: &dyn IndexProvider,
    arms: &[ArmSpec],
    state: &JointState,
) -> Result<Vec<f64>> {
    arms.iter()
        .zip(&state.0)
        .map(|(arm, &s)| provider.lambda_plus(arm, s))
        .collect()
}

fn min_cost(arms: &[ArmSpec]) -> f64 {
    arms.iter().map(|a| a.cost1()).fold(f64::INFINITY, f64::min)
}

/// Next phase budget; a zero budget jumps to the cheapest positive cost left.
fn grow_budget(b: f64, m: f64, arms: &[ArmSpec], unselected: &[usize]) -> f64 {
    let next = b * m;
    if next > 0.0 {
        return next;
    }
    unselected
        .iter()
        .map(|&i| arms[i].cost1())
        .filter(|&c| c > 0.0)
        .fold(f64::INFINITY, f64::min)
}

/// Greedy minimization: add arms in decreasing max-direction index (the same
/// as increasing min-direction index) until the guard is met or every arm is
/// selected.
pub fn greedy_min(
    arms: &[ArmSpec],
    state: &JointState,
    provider: &dyn IndexProvider,
    cfg: &SelectorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ActionVector> {
    let indices = current_indices(provider, arms, state)?;
    let mut sel = Selection::new(arms, state, cfg);
    let all: Vec<usize> = (0..arms.len()).collect();
    let order = greedy_max_order(&all, &indices, &vec![0.0; arms.len()], 0.0);
    if !sel.done(rng)? {
        for i in order {
            sel.add(i);
            if sel.done(rng)? {
                break;
            }
        }
    }
    Ok(sel.finish())
}

/// Increasing-budget minimization. `budget` carries the phase budget between
/// calls when `cfg.persist_budget` is set.
pub fn increasing_budget(
    arms: &[ArmSpec],
    state: &JointState,
    provider: &dyn IndexProvider,
    cfg: &SelectorConfig,
    budget: &mut Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<ActionVector> {
    let indices = current_indices(provider, arms, state)?;
    let costs: Vec<f64> = arms.iter().map(|a| a.cost1()).collect();
    let mut sel = Selection::new(arms, state, cfg);
    let mut b = start_budget(arms, cfg, budget);
    if !sel.done(rng)? {
        loop {
            let picks = greedy_max_order(&sel.unselected(), &indices, &costs, b);
            let stop = sel.add_phase(&picks, rng)?;
            b = grow_budget(b, cfg.m, arms, &sel.unselected());
            if stop {
                break;
            }
        }
    }
    if cfg.persist_budget {
        *budget = Some(b);
    }
    Ok(sel.finish())
}

fn start_budget(arms: &[ArmSpec], cfg: &SelectorConfig, budget: &Option<f64>) -> f64 {
    match budget {
        Some(b) if cfg.persist_budget => *b,
        _ => min_cost(arms),
    }
}

/// Largest active reward any arm can pay at its current state.
pub fn max_current_reward(arms: &[ArmSpec], state: &JointState) -> f64 {
    arms.iter()
        .zip(&state.0)
        .map(|(arm, &s)| arm.reward(s, ACTIVE).max())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Truncation levels `0..=ceil(log2 r_max)`; only level 0 when `r_max <= 1`.
pub fn truncation_levels(r_max: f64) -> u32 {
    if r_max > 1.0 {
        r_max.log2().ceil() as u32
    } else {
        0
    }
}

/// Truncated-reward minimization. In every budget phase it scans truncation
/// levels from the most aggressive and keeps the first whose greedy run is
/// poor: every arm left unselected has truncated index at most `1/b`. When
/// no level is poor the least aggressive level is used.
pub fn truncated_reward(
    arms: &[ArmSpec],
    state: &JointState,
    cache: &IndexCache,
    cfg: &SelectorConfig,
    budget: &mut Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<ActionVector> {
    let costs: Vec<f64> = arms.iter().map(|a| a.cost1()).collect();
    let tau_max = truncation_levels(max_current_reward(arms, state));
    let mut sel = Selection::new(arms, state, cfg);
    let mut b = start_budget(arms, cfg, budget);
    let mut trunc = vec![vec![None; arms.len()]; tau_max as usize + 1];
    if !sel.done(rng)? {
        loop {
            let cands = sel.unselected();
            let mut chosen = Vec::new();
            for tau in 0..=tau_max {
                let mut idx = vec![0.0; arms.len()];
                for &i in &cands {
                    let slot = &mut trunc[tau as usize][i];
                    if slot.is_none() {
                        *slot = Some(cache.truncated(&arms[i], tau, state.0[i])?);
                    }
                    idx[i] = slot.unwrap();
                }
                let picks = greedy_max_order(&cands, &idx, &costs, b);
                let poor = cands
                    .iter()
                    .filter(|i| !picks.contains(i))
                    .all(|&i| idx[i] <= 1.0 / b);
                chosen = picks;
                if poor {
                    break;
                }
            }
            let stop = sel.add_phase(&chosen, rng)?;
            b = grow_budget(b, cfg.m, arms, &sel.unselected());
            if stop {
                break;
            }
        }
    }
    if cfg.persist_budget {
        *budget = Some(b);
    }
    Ok(sel.finish())
}

/// Uniformly random additions until the guard is met or all arms are chosen.
pub fn random_baseline(
    arms: &[ArmSpec],
    state: &JointState,
    cfg: &SelectorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ActionVector> {
    let mut sel = Selection::new(arms, state, cfg);
    let mut order: Vec<usize> = (0..arms.len()).collect();
    order.shuffle(rng);
    if !sel.done(rng)? {
        for i in order {
            sel.add(i);
            if sel.done(rng)? {
                break;
            }
        }
    }
    Ok(sel.finish())
}

/// One of the built-in policies bound to its configuration and index source.
pub struct Selector {
    pub kind: PolicyKind,
    pub cfg: SelectorConfig,
    provider: Arc<dyn IndexProvider>,
    cache: Arc<IndexCache>,
    budget: Option<f64>,
}

impl Selector {
    /// Uses `cache` for every index, truncated or not.
    pub fn new(kind: PolicyKind, cfg: SelectorConfig, cache: Arc<IndexCache>) -> Result<Self> {
        cfg.validate()?;
        Ok(Selector {
            kind,
            cfg,
            provider: cache.clone(),
            cache,
            budget: None,
        })
    }

    /// Takes untruncated indices from `provider` (for example a learned
    /// table); truncated indices still come from `cache`.
    pub fn with_provider(
        kind: PolicyKind,
        cfg: SelectorConfig,
        provider: Arc<dyn IndexProvider>,
        cache: Arc<IndexCache>,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Selector {
            kind,
            cfg,
            provider,
            cache,
            budget: None,
        })
    }
}

impl Policy for Selector {
    fn name(&self) -> String {
        self.kind.name().to_string()
    }

    fn reset(&mut self) {
        self.budget = None;
    }

    fn select(
        &mut self,
        arms: &[ArmSpec],
        state: &JointState,
        rng: &mut ChaCha8Rng,
    ) -> Result<ActionVector> {
        let cfg = &self.cfg;
        match self.kind {
            PolicyKind::GreedyMin => greedy_min(arms, state, self.provider.as_ref(), cfg, rng),
            PolicyKind::IncreasingBudget => increasing_budget(
                arms,
                state,
                self.provider.as_ref(),
                cfg,
                &mut self.budget,
                rng,
            ),
            PolicyKind::TruncatedReward => {
                truncated_reward(arms, state, &self.cache, cfg, &mut self.budget, rng)
            }
            PolicyKind::Random => random_baseline(arms, state, cfg, rng),
            PolicyKind::AllActive => Ok(ActionVector::all_active(arms.len())),
            PolicyKind::GreedyMax => {
                let indices = current_indices(self.provider.as_ref(), arms, state)?;
                let costs: Vec<f64> = arms.iter().map(|a| a.cost1()).collect();
                Ok(greedy_max(&indices, &costs, cfg.max_budget))
            }
        }
    }
}
