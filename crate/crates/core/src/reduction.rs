//! Compiles a space-bounded Turing machine into a deterministic RMAB whose
//! cheapest way to meet the reward threshold depends on whether the machine
//! halts, and checks that dichotomy on small machines.
//!
//! The instance has one special arm followed by one arm per tape cell. For
//! the first `W = ceil(2 alpha)` steps (warm-up) cells pay nothing. Playing
//! the special arm at step 1 commits to paying 1 per step for the rest of the
//! warm-up, after which it pays `R` for free forever. Not playing it gives
//! `R` for free during the warm-up, after which it pays `R` only when played,
//! at cost 1. From then on the cells can supply `R` at zero cost only by
//! simulating the machine, one machine step per round of `n(2|Q|+1)` steps:
//!
//! * slot `(0,0)`: the old head cell clears itself; the cell holding a copied
//!   state applies the transition and becomes the head, paying `R`. A cell
//!   that reaches a halting state (or moves off the tape) is trapped and pays
//!   nothing from then on.
//! * copy slots `k = 1..|Q|`: the head pays `R` except at slot
//!   `(next, state)`, where `R` comes only from playing cell `next`, which
//!   copies `k` into it. Playing any other non-head cell at its own slot also
//!   copies `k` and pays `R`.
//! * validation slots `k = |Q|+1..2|Q|`: a non-head cell holding a copied
//!   state pays `-R` at its own slot; the head pays `2R` at the correct slot
//!   and `R` elsewhere.
//! * remaining slots (`k = 0`, `j != 0`): the head pays `R`.
//!
//! The clock advances `j <- j+1 mod n` and, when the previous `j` was 0,
//! `k <- k+1 mod 2|Q|+1`. Rewards here count toward the threshold whether or
//! not the arm is played.

use std::collections::{HashMap, VecDeque};
use std::hash::Hash;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{meets_threshold, ArmSpec, RewardDist, RmabInstance, ACTIVE, PASSIVE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    L,
    R,
}

/// A one-tape machine on a tape of `tape_len` cells. States and symbols are
/// indices into `states` and `gamma`.
#[derive(Clone, Debug, PartialEq)]
pub struct TmSpec {
    pub states: Vec<String>,
    pub gamma: Vec<String>,
    pub sigma: Vec<String>,
    pub start: usize,
    pub halting: Vec<usize>,
    pub blank: usize,
    pub delta: HashMap<(usize, usize), (usize, usize, Move)>,
    pub input: Vec<usize>,
    pub tape_len: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum InputJson {
    Chars(String),
    Symbols(Vec<String>),
}

#[derive(Serialize, Deserialize)]
struct TmJson {
    states: Vec<String>,
    gamma: Vec<String>,
    sigma: Vec<String>,
    delta: Vec<[String; 5]>,
    input: InputJson,
    tape_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    accept: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    blank: Option<String>,
}

fn lookup(names: &[String], name: &str, what: &str) -> Result<usize> {
    names
        .iter()
        .position(|s| s == name)
        .ok_or_else(|| Error::arg(format!("unknown {what} {name:?}")))
}

impl TmSpec {
    /// Parses the JSON description. `start` defaults to the first state,
    /// `accept`/`reject` to states named "accept"/"reject" when present, and
    /// `blank` to the first tape symbol. `input` is a string of one-character
    /// symbols or a list of symbol names.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: TmJson = serde_json::from_str(text)?;
        let start = match &raw.start {
            Some(s) => lookup(&raw.states, s, "state")?,
            None => 0,
        };
        let mut halting = Vec::new();
        for (given, default) in [(&raw.accept, "accept"), (&raw.reject, "reject")] {
            match given {
                Some(s) => halting.push(lookup(&raw.states, s, "state")?),
                None => {
                    if let Some(i) = raw.states.iter().position(|s| s == default) {
                        halting.push(i);
                    }
                }
            }
        }
        halting.dedup();
        let blank = match &raw.blank {
            Some(s) => lookup(&raw.gamma, s, "symbol")?,
            None => 0,
        };
        let mut delta = HashMap::new();
        for [q, g, q2, g2, mv] in &raw.delta {
            let mv = match mv.as_str() {
                "L" => Move::L,
                "R" => Move::R,
                other => return Err(Error::arg(format!("move must be L or R, got {other:?}"))),
            };
            let key = (
                lookup(&raw.states, q, "state")?,
                lookup(&raw.gamma, g, "symbol")?,
            );
            let val = (
                lookup(&raw.states, q2, "state")?,
                lookup(&raw.gamma, g2, "symbol")?,
                mv,
            );
            if delta.insert(key, val).is_some() {
                return Err(Error::arg(format!("duplicate transition for ({q}, {g})")));
            }
        }
        let input_names: Vec<String> = match raw.input {
            InputJson::Chars(s) => s.chars().map(|c| c.to_string()).collect(),
            InputJson::Symbols(v) => v,
        };
        for s in &input_names {
            if !raw.sigma.contains(s) {
                return Err(Error::arg(format!("input symbol {s:?} is not in sigma")));
            }
        }
        let input = input_names
            .iter()
            .map(|s| lookup(&raw.gamma, s, "symbol"))
            .collect::<Result<Vec<_>>>()?;
        let tm = TmSpec {
            states: raw.states,
            gamma: raw.gamma,
            sigma: raw.sigma,
            start,
            halting,
            blank,
            delta,
            input,
            tape_len: raw.tape_len,
        };
        tm.validate()?;
        Ok(tm)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let mut delta: Vec<[String; 5]> = self
            .delta
            .iter()
            .map(|(&(q, g), &(q2, g2, mv))| {
                [
                    self.states[q].clone(),
                    self.gamma[g].clone(),
                    self.states[q2].clone(),
                    self.gamma[g2].clone(),
                    format!("{mv:?}"),
                ]
            })
            .collect();
        delta.sort();
        let raw = TmJson {
            states: self.states.clone(),
            gamma: self.gamma.clone(),
            sigma: self.sigma.clone(),
            delta,
            input: InputJson::Symbols(self.input.iter().map(|&g| self.gamma[g].clone()).collect()),
            tape_len: self.tape_len,
            start: Some(self.states[self.start].clone()),
            accept: self.halting.first().map(|&q| self.states[q].clone()),
            reject: self.halting.get(1).map(|&q| self.states[q].clone()),
            blank: Some(self.gamma[self.blank].clone()),
        };
        serde_json::to_string_pretty(&raw).expect("machine serialization cannot fail")
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() || self.gamma.is_empty() {
            return Err(Error::arg(
                "a machine needs at least one state and one symbol",
            ));
        }
        if self.tape_len == 0 {
            return Err(Error::arg("tape length must be positive"));
        }
        if self.input.len() > self.tape_len {
            return Err(Error::arg("input is longer than the tape"));
        }
        for s in &self.sigma {
            if !self.gamma.contains(s) {
                return Err(Error::arg(format!("sigma symbol {s:?} is not in gamma")));
            }
        }
        for q in 0..self.states.len() {
            if self.is_halting(q) {
                continue;
            }
            for g in 0..self.gamma.len() {
                if !self.delta.contains_key(&(q, g)) {
                    return Err(Error::arg(format!(
                        "no transition for ({}, {})",
                        self.states[q], self.gamma[g]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_halting(&self, q: usize) -> bool {
        self.halting.contains(&q)
    }

    pub fn initial_tape(&self) -> Vec<usize> {
        let mut tape = self.input.clone();
        tape.resize(self.tape_len, self.blank);
        tape
    }

    /// Two working states plus accept/reject; halts after four steps on "1"
    /// with a three-cell tape.
    pub fn toy_halting() -> Self {
        let text = r#"{
          "states": ["a", "b", "accept", "reject"],
          "gamma": ["_", "1"], "sigma": ["1"],
          "delta": [["a","_","b","1","R"], ["a","1","b","_","R"],
                    ["b","_","a","1","L"], ["b","1","accept","1","L"]],
          "input": "1", "tape_len": 3
        }"#;
        Self::from_json(text).expect("built-in machine is valid")
    }

    /// One state bouncing between two cells forever.
    pub fn toy_looping() -> Self {
        let text = r#"{
          "states": ["a"], "gamma": ["_", "1"], "sigma": ["1"],
          "delta": [["a","1","a","1","R"], ["a","_","a","_","L"]],
          "input": "1", "tape_len": 2
        }"#;
        Self::from_json(text).expect("built-in machine is valid")
    }
}

/// Configuration of the direct simulator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TmConfig {
    pub state: usize,
    pub head: usize,
    pub tape: Vec<usize>,
}

/// Run of the direct simulator: `configs[t]` is the configuration after `t`
/// steps. `halted` is the step count at which a halting state was entered.
#[derive(Clone, Debug, PartialEq)]
pub struct TmTrace {
    pub configs: Vec<TmConfig>,
    pub halted: Option<usize>,
}

/// Runs the machine for at most `max_steps` steps. Moving off the tape is an
/// error: the machine does not fit the declared space bound.
pub fn simulate_tm(tm: &TmSpec, max_steps: usize) -> Result<TmTrace> {
    let mut cfg = TmConfig {
        state: tm.start,
        head: 0,
        tape: tm.initial_tape(),
    };
    let mut configs = vec![cfg.clone()];
    if tm.is_halting(cfg.state) {
        return Ok(TmTrace {
            configs,
            halted: Some(0),
        });
    }
    for t in 1..=max_steps {
        let (q2, g2, mv) = tm.delta[&(cfg.state, cfg.tape[cfg.head])];
        cfg.tape[cfg.head] = g2;
        cfg.state = q2;
        cfg.head = shift(cfg.head, mv, tm.tape_len).ok_or_else(|| {
            Error::arg(format!(
                "head leaves the {}-cell tape at step {t}",
                tm.tape_len
            ))
        })?;
        configs.push(cfg.clone());
        if tm.is_halting(q2) {
            return Ok(TmTrace {
                configs,
                halted: Some(t),
            });
        }
    }
    Ok(TmTrace {
        configs,
        halted: None,
    })
}

fn shift(pos: usize, mv: Move, len: usize) -> Option<usize> {
    match mv {
        Move::L => pos.checked_sub(1),
        Move::R => (pos + 1 < len).then_some(pos + 1),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReductionParams {
    pub alpha: f64,
    pub reward: f64,
    /// Largest allowed `T`.
    pub t_cap: f64,
}

impl ReductionParams {
    pub fn new(alpha: f64) -> Self {
        ReductionParams {
            alpha,
            reward: 1.0,
            t_cap: 1e12,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return Err(Error::arg(format!(
                "alpha must be at least 1, got {}",
                self.alpha
            )));
        }
        if !(self.reward > 0.0 && self.reward.is_finite()) {
            return Err(Error::arg("R must be positive"));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        (2.0 * self.alpha).ceil() as usize
    }
}

/// `T = |Q| n^(|Gamma|+2)`.
pub fn t_bound(tm: &TmSpec) -> f64 {
    tm.states.len() as f64 * (tm.tape_len as f64).powi(tm.gamma.len() as i32 + 2)
}

/// `beta = exp(ln(1/2) / (T + 5 alpha^2))`, so `beta^t >= 1/2` up to
/// `t = T + 5 alpha^2`.
pub fn reduction_beta(t: f64, alpha: f64) -> f64 {
    (0.5f64.ln() / (t + 5.0 * alpha * alpha)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpecialState {
    Start,
    Paid(usize),
    Free(usize),
    PaidDone,
    PayTrap,
}

/// Simulation-phase fields of a cell. `tmst` is 0 for no state, else the
/// state index plus one; `k` in `1..=|Q|` addresses the same numbering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellTuple {
    pub tmst: usize,
    pub symbol: usize,
    pub current: bool,
    pub next: usize,
    pub j: usize,
    pub k: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellState {
    Warm(usize),
    Sim(CellTuple),
    Trap { symbol: usize },
}

/// A compiled instance with the meaning of every arm state.
#[derive(Clone, Debug)]
pub struct CompiledTm {
    pub tm: TmSpec,
    pub params: ReductionParams,
    pub instance: RmabInstance,
    pub t_bound: f64,
    pub warmup: usize,
    pub special_states: Vec<SpecialState>,
    pub cell_states: Vec<Vec<CellState>>,
}

impl CompiledTm {
    pub fn n_cells(&self) -> usize {
        self.tm.tape_len
    }

    pub fn n_states(&self) -> usize {
        self.tm.states.len()
    }

    /// RMAB steps per simulated machine step.
    pub fn round_len(&self) -> usize {
        self.n_cells() * (2 * self.n_states() + 1)
    }

    pub fn special(&self, state: usize) -> SpecialState {
        self.special_states[state]
    }

    /// State of cell `i` (arm `i + 1`).
    pub fn cell(&self, i: usize, state: usize) -> CellState {
        self.cell_states[i][state]
    }

    /// Initial joint state: special arm then cells.
    pub fn initial_state(&self) -> Vec<usize> {
        vec![0; self.instance.len()]
    }

    /// Deterministic step; returns the total reward over all arms, the cost
    /// and the next joint state.
    pub fn step(&self, state: &[usize], action: &[bool]) -> (f64, f64, Vec<usize>) {
        let mut reward = 0.0;
        let mut cost = 0.0;
        let mut next = Vec::with_capacity(state.len());
        for (arm, (&s, &a)) in self.instance.arms.iter().zip(state.iter().zip(action)) {
            let act = if a { ACTIVE } else { PASSIVE };
            reward += arm.reward(s, act).outcomes()[0].0;
            cost += arm.cost(a);
            next.push(arm.transitions(s, act)[0].0);
        }
        (reward, cost, next)
    }

    /// Clock slot shared by the cells, if they are in the simulation phase.
    pub fn slot(&self, state: &[usize]) -> Option<(usize, usize)> {
        (0..self.n_cells()).find_map(|i| match self.cell(i, state[i + 1]) {
            CellState::Sim(t) => Some((t.j, t.k)),
            _ => None,
        })
    }

    /// Cells whose `current` flag is set: `(position, tmst, next)`.
    pub fn heads(&self, state: &[usize]) -> Vec<(usize, usize, usize)> {
        (0..self.n_cells())
            .filter_map(|i| match self.cell(i, state[i + 1]) {
                CellState::Sim(t) if t.current => Some((i, t.tmst, t.next)),
                _ => None,
            })
            .collect()
    }

    /// Tape symbols held by the cells.
    pub fn tape(&self, state: &[usize]) -> Vec<usize> {
        (0..self.n_cells())
            .map(|i| match self.cell(i, state[i + 1]) {
                CellState::Sim(t) => t.symbol,
                CellState::Trap { symbol } => symbol,
                CellState::Warm(_) => self.tm.initial_tape()[i],
            })
            .collect()
    }
}

fn special_step(s: SpecialState, played: bool, w: usize, r: f64) -> (f64, SpecialState) {
    let after = |m: usize, paid: bool| match (m < w, paid) {
        (true, true) => SpecialState::Paid(m + 1),
        (true, false) => SpecialState::Free(m + 1),
        (false, true) => SpecialState::PaidDone,
        (false, false) => SpecialState::PayTrap,
    };
    match s {
        SpecialState::Start => (r, after(1, played)),
        SpecialState::Paid(m) => (if played { r } else { 0.0 }, after(m, true)),
        SpecialState::Free(m) => (r, after(m, false)),
        SpecialState::PaidDone => (r, s),
        SpecialState::PayTrap => (if played { r } else { 0.0 }, s),
    }
}

struct CellRules<'a> {
    tm: &'a TmSpec,
    w: usize,
    r: f64,
    tape: Vec<usize>,
}

impl CellRules<'_> {
    fn initial_sim(&self, i: usize) -> CellTuple {
        CellTuple {
            tmst: if i == 0 { self.tm.start + 1 } else { 0 },
            symbol: self.tape[i],
            current: false,
            next: 0,
            j: 0,
            k: 0,
        }
    }

    fn step(&self, i: usize, s: CellState, played: bool) -> (f64, CellState) {
        let t = match s {
            CellState::Warm(m) if m < self.w => return (0.0, CellState::Warm(m + 1)),
            CellState::Warm(_) => return (0.0, CellState::Sim(self.initial_sim(i))),
            CellState::Trap { .. } => return (0.0, s),
            CellState::Sim(t) => t,
        };
        let n = self.tm.tape_len;
        let q = self.tm.states.len();
        let r = self.r;
        let mut u = t;
        u.j = (t.j + 1) % n;
        if t.j == 0 {
            u.k = (t.k + 1) % (2 * q + 1);
        }
        let (j, k) = (t.j, t.k);
        let mut reward = 0.0;
        if j == 0 && k == 0 {
            if t.current {
                u.current = false;
                u.tmst = 0;
            } else if t.tmst != 0 {
                let st = t.tmst - 1;
                if self.tm.is_halting(st) {
                    return (0.0, CellState::Trap { symbol: t.symbol });
                }
                let (q2, g2, mv) = self.tm.delta[&(st, t.symbol)];
                let Some(pos) = shift(i, mv, n) else {
                    return (0.0, CellState::Trap { symbol: g2 });
                };
                if self.tm.is_halting(q2) {
                    return (0.0, CellState::Trap { symbol: g2 });
                }
                u.current = true;
                u.tmst = q2 + 1;
                u.symbol = g2;
                u.next = pos;
                reward = r;
            }
        } else if (1..=q).contains(&k) {
            if t.current && !(k == t.tmst && t.next == j) {
                reward = r;
            } else if !t.current && played && i == j {
                u.tmst = k;
                reward = r;
            }
        } else if (q + 1..=2 * q).contains(&k) {
            if !t.current && i == j && t.tmst != 0 && k == q + t.tmst {
                reward = -r;
            } else if t.current && k == q + t.tmst && t.next == j {
                reward = 2.0 * r;
            } else if t.current {
                reward = r;
            }
        } else if t.current {
            reward = r;
        }
        (reward, CellState::Sim(u))
    }
}

/// Enumerates the states reachable from `start` under both actions and
/// builds the deterministic arm.
fn build_arm<S: Copy + Eq + Hash>(
    id: usize,
    start: S,
    cost1: f64,
    step: impl Fn(S, bool) -> (f64, S),
) -> Result<(ArmSpec, Vec<S>)> {
    let mut index: HashMap<S, usize> = HashMap::new();
    let mut states = vec![start];
    index.insert(start, 0);
    let mut queue = VecDeque::from([start]);
    let mut rows = Vec::new();
    while let Some(s) = queue.pop_front() {
        let mut trans: [Vec<(usize, f64)>; 2] = Default::default();
        let mut rewards = Vec::with_capacity(2);
        for (a, slot) in trans.iter_mut().enumerate() {
            let (r, next) = step(s, a == ACTIVE);
            let idx = *index.entry(next).or_insert_with(|| {
                states.push(next);
                queue.push_back(next);
                states.len() - 1
            });
            *slot = vec![(idx, 1.0)];
            rewards.push(RewardDist::point(r));
        }
        let rewards: [RewardDist; 2] = rewards.try_into().expect("two actions");
        rows.push((trans, rewards));
    }
    let (transition, reward) = rows.into_iter().unzip();
    Ok((ArmSpec::new(id, transition, reward, cost1)?, states))
}

/// Builds the instance: arm 0 is the special arm (cost 1), arm `i+1` is tape
/// cell `i` (cost 0). Threshold `R`, success probability 1.
pub fn compile_tm(tm: &TmSpec, params: &ReductionParams) -> Result<CompiledTm> {
    tm.validate()?;
    params.validate()?;
    let t = t_bound(tm);
    if t > params.t_cap {
        return Err(Error::Capacity(format!(
            "T = {t} exceeds the cap {}; only small machines are supported",
            params.t_cap
        )));
    }
    let beta = reduction_beta(t, params.alpha);
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Capacity(format!(
            "T = {t} makes the discount factor round to 1"
        )));
    }
    let w = params.warmup_steps();
    let r = params.reward;
    let (special, special_states) =
        build_arm(0, SpecialState::Start, 1.0, |s, a| special_step(s, a, w, r))?;
    let rules = CellRules {
        tm,
        w,
        r,
        tape: tm.initial_tape(),
    };
    let mut arms = vec![special];
    let mut cell_states = Vec::with_capacity(tm.tape_len);
    for i in 0..tm.tape_len {
        let (arm, states) = build_arm(i + 1, CellState::Warm(1), 0.0, |s, a| rules.step(i, s, a))?;
        arms.push(arm);
        cell_states.push(states);
    }
    Ok(CompiledTm {
        tm: tm.clone(),
        params: *params,
        instance: RmabInstance::new(arms, beta, r, 1.0)?,
        t_bound: t,
        warmup: w,
        special_states,
        cell_states,
    })
}

/// The copy play the simulation needs at this state, if any: the cell
/// `next` at slot `(next, state)`.
pub fn copy_play(c: &CompiledTm, state: &[usize]) -> Option<usize> {
    let (j, k) = c.slot(state)?;
    let heads = c.heads(state);
    let &(_, tmst, next) = heads.first()?;
    ((1..=c.n_states()).contains(&k) && j == next && k == tmst).then_some(next)
}

/// Simulates the machine: declines the special arm at step 1, makes the
/// required copy play each round, and plays the special arm whenever the
/// cells alone would fall short of `R`.
pub fn faithful_action(c: &CompiledTm, state: &[usize]) -> Vec<bool> {
    let mut action = vec![false; state.len()];
    if let Some(cell) = copy_play(c, state) {
        action[cell + 1] = true;
    }
    if c.special(state[0]) == SpecialState::PayTrap {
        let (reward, _, _) = c.step(state, &action);
        if !meets_threshold(reward, c.params.reward) {
            action[0] = true;
        }
    }
    action
}

/// Plays the special arm through the warm-up and nothing afterwards.
pub fn special_action(c: &CompiledTm, state: &[usize]) -> Vec<bool> {
    let mut action = vec![false; state.len()];
    action[0] = matches!(
        c.special(state[0]),
        SpecialState::Start | SpecialState::Paid(_)
    );
    action
}

/// Outcome of running one canonical policy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyAudit {
    /// Discounted cost including, when the run ends absorbed in paying 1 per
    /// step, the exact infinite tail.
    pub discounted_cost: f64,
    pub steps: usize,
    pub violations: usize,
    /// First step (1-based) at which the special arm had to be paid for
    /// after the warm-up.
    pub trapped_at: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PerturbationAudit {
    /// Extra wrong copy plays that change some cell's stored state.
    pub additive_effective: usize,
    pub additive_detected: usize,
    /// Extra plays of the head cell, which change nothing.
    pub excluded_head_plays: usize,
    /// Extra plays overwritten by the correct copy later in the same round.
    pub excluded_overwritten: usize,
    /// Wrong copy plays made instead of the correct one.
    pub replace_total: usize,
    pub replace_detected: usize,
    /// `(round, j, k, variant)` of every perturbation not flagged at the
    /// expected step.
    pub missed: Vec<(usize, usize, usize, &'static str)>,
}

impl PerturbationAudit {
    pub fn detection_rate(&self) -> f64 {
        let total = self.additive_effective + self.replace_total;
        if total == 0 {
            return 1.0;
        }
        (self.additive_detected + self.replace_detected) as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReductionReport {
    pub t_bound: f64,
    pub beta: f64,
    pub warmup: usize,
    pub round_len: usize,
    pub arm_states: Vec<usize>,
    /// Machine steps after which the direct simulator halted, if it did
    /// within `T` steps.
    pub tm_halts_after: Option<usize>,
    pub faithful: PolicyAudit,
    pub special: PolicyAudit,
    /// Cheaper policy is the special one exactly when the machine halts.
    pub iff_holds: bool,
    /// Machine steps whose tape, state and head were checked against the
    /// direct simulator; `tape_mismatches` lists the failures.
    pub steps_checked: usize,
    pub tape_mismatches: Vec<usize>,
    pub clock_ok: bool,
    pub head_unique: bool,
    pub special_cost_in_range: bool,
    pub trap_cost_at_least: Option<bool>,
    pub perturbation: PerturbationAudit,
}

impl ReductionReport {
    pub fn all_ok(&self) -> bool {
        self.iff_holds
            && self.tape_mismatches.is_empty()
            && self.clock_ok
            && self.head_unique
            && self.special_cost_in_range
            && self.trap_cost_at_least != Some(false)
            && self.faithful.violations == 0
            && self.special.violations == 0
            && self.perturbation.missed.is_empty()
    }
}

struct Trajectory {
    states: Vec<Vec<usize>>,
    actions: Vec<Vec<bool>>,
    rewards: Vec<f64>,
    costs: Vec<f64>,
}

fn run(
    c: &CompiledTm,
    start: Vec<usize>,
    steps: usize,
    mut policy: impl FnMut(usize, &[usize]) -> Vec<bool>,
) -> Trajectory {
    let mut traj = Trajectory {
        states: Vec::with_capacity(steps + 1),
        actions: Vec::with_capacity(steps),
        rewards: Vec::with_capacity(steps),
        costs: Vec::with_capacity(steps),
    };
    let mut state = start;
    for t in 0..steps {
        let action = policy(t, &state);
        let (r, cost, next) = c.step(&state, &action);
        traj.states.push(state);
        traj.actions.push(action);
        traj.rewards.push(r);
        traj.costs.push(cost);
        state = next;
    }
    traj.states.push(state);
    traj
}

fn first_violation(c: &CompiledTm, rewards: &[f64]) -> Option<usize> {
    rewards
        .iter()
        .position(|&r| !meets_threshold(r, c.params.reward))
}

/// Compiles the machine and audits both canonical policies over
/// `horizon_tm_steps` simulated machine steps.
pub fn verify_reduction(
    tm: &TmSpec,
    params: &ReductionParams,
    horizon_tm_steps: usize,
) -> Result<ReductionReport> {
    let c = compile_tm(tm, params)?;
    let beta = c.instance.beta;
    let w = c.warmup;
    let l = c.round_len();
    let n = c.n_cells();
    let verdict_steps = c.t_bound.min(1e7) as usize;
    let trace = simulate_tm(tm, verdict_steps.max(horizon_tm_steps))?;
    let halts = trace.halted;

    // Rounds to simulate: through the halting round when it falls inside
    // the horizon, plus one more round to confirm absorption.
    let rounds = match halts {
        Some(h) if h <= horizon_tm_steps => h + 1,
        _ => horizon_tm_steps,
    };
    let total = w + rounds * l;

    let faithful = run(&c, c.initial_state(), total, |_, s| faithful_action(&c, s));
    let trapped_at = (w..total).find(|&t| faithful.actions[t][0]);
    let mut f_cost = 0.0;
    let mut weight = 1.0;
    for t in 0..total {
        if Some(t) == trapped_at {
            break;
        }
        f_cost += weight * faithful.costs[t];
        weight *= beta;
    }
    let mut absorbed = false;
    if let Some(t0) = trapped_at {
        // from here on only the special arm pays
        absorbed = (t0..total).all(|t| {
            faithful.actions[t][0]
                && faithful.actions[t][1..].iter().all(|&a| !a)
                && c.step(&faithful.states[t], &vec![false; n + 1]).0 < params.reward
        });
        f_cost += beta.powi(t0 as i32) / (1.0 - beta);
    }
    let faithful_audit = PolicyAudit {
        discounted_cost: f_cost,
        steps: total,
        violations: faithful
            .rewards
            .iter()
            .filter(|&&r| !meets_threshold(r, params.reward))
            .count(),
        trapped_at: trapped_at.map(|t| t + 1),
    };

    let special = run(&c, c.initial_state(), total, |_, s| special_action(&c, s));
    let special_audit = PolicyAudit {
        discounted_cost: crate::model::discounted_sum(&special.costs, beta),
        steps: total,
        violations: special
            .rewards
            .iter()
            .filter(|&&r| !meets_threshold(r, params.reward))
            .count(),
        trapped_at: None,
    };

    let iff_holds = match halts {
        Some(_) => absorbed && special_audit.discounted_cost < faithful_audit.discounted_cost,
        None => faithful_audit.discounted_cost < special_audit.discounted_cost,
    };

    // clock: every cell shows the same slot, and every round visits each
    // slot exactly once
    let mut clock_ok = true;
    let mut head_unique = true;
    let mut slots = Vec::new();
    for t in w..total {
        let st = &faithful.states[t];
        let mut seen = None;
        for i in 0..n {
            if let CellState::Sim(ct) = c.cell(i, st[i + 1]) {
                match seen {
                    None => seen = Some((ct.j, ct.k)),
                    Some(s) if s != (ct.j, ct.k) => clock_ok = false,
                    _ => {}
                }
            }
        }
        match seen {
            Some(s) => slots.push(s),
            None => clock_ok = false,
        }
        let halted_now = trapped_at.is_some_and(|t0| t >= t0);
        if !halted_now && t > w && seen != Some((0, 0)) && c.heads(st).len() != 1 {
            head_unique = false;
        }
    }
    if slots.len() >= l {
        let mut first: Vec<_> = slots[..l].to_vec();
        first.sort_unstable();
        first.dedup();
        clock_ok &= first.len() == l;
        clock_ok &= slots.iter().enumerate().all(|(t, s)| *s == slots[t % l]);
        clock_ok &= slots.iter().step_by(l).all(|&s| s == (0, 0));
    }

    // the state right after the transition slot of round r reflects r
    // machine steps
    let mut tape_mismatches = Vec::new();
    let mut steps_checked = 0;
    for r in 1..=rounds {
        let t = w + (r - 1) * l + 1;
        if t > total || r >= trace.configs.len() {
            break;
        }
        let st = &faithful.states[t];
        let want = &trace.configs[r];
        steps_checked += 1;
        let mut ok = c.tape(st) == want.tape;
        if halts != Some(r) {
            let heads = c.heads(st);
            ok &= heads.len() == 1 && heads[0].1 == want.state + 1 && heads[0].2 == want.head;
        }
        if !ok {
            tape_mismatches.push(r);
        }
        if halts == Some(r) {
            break;
        }
    }

    let perturbation = audit_perturbations(&c, &faithful, rounds, halts);

    let special_cost_in_range = special_audit.discounted_cost >= params.alpha - 1e-9
        && special_audit.discounted_cost <= 2.0 * params.alpha + 1e-9;
    let trap_cost_at_least = trapped_at
        .map(|t0| beta.powi(t0 as i32) / (1.0 - beta) >= 2.0 * params.alpha * params.alpha);

    Ok(ReductionReport {
        t_bound: c.t_bound,
        beta,
        warmup: w,
        round_len: l,
        arm_states: c.instance.arms.iter().map(|a| a.num_states()).collect(),
        tm_halts_after: halts,
        faithful: faithful_audit,
        special: special_audit,
        iff_holds,
        steps_checked,
        tape_mismatches,
        clock_ok,
        head_unique,
        special_cost_in_range,
        trap_cost_at_least,
        perturbation,
    })
}

/// Step offset of slot `(j, k)` within a round that starts at `(0,0)`. Each
/// value of `k` is held while `j` runs `1..n-1, 0`; the `k = 0` block ends
/// the round.
fn slot_offset(n: usize, q: usize, j: usize, k: usize) -> usize {
    let within = if j == 0 { n - 1 } else { j - 1 };
    match (j, k) {
        (0, 0) => 0,
        (_, 0) => 1 + 2 * q * n + within,
        _ => 1 + (k - 1) * n + within,
    }
}

/// The copy plays alone. The audit uses this so that paying for the special
/// arm cannot mask a shortfall.
fn copy_action(c: &CompiledTm, state: &[usize]) -> Vec<bool> {
    let mut action = vec![false; state.len()];
    if let Some(cell) = copy_play(c, state) {
        action[cell + 1] = true;
    }
    action
}

fn audit_perturbations(
    c: &CompiledTm,
    faithful: &Trajectory,
    rounds: usize,
    halts: Option<usize>,
) -> PerturbationAudit {
    let n = c.n_cells();
    let q = c.n_states();
    let w = c.warmup;
    let l = c.round_len();
    let mut audit = PerturbationAudit::default();
    for r in 1..=rounds {
        if halts.is_some_and(|h| r >= h) {
            break;
        }
        let t0 = w + (r - 1) * l;
        // after the transition slot the head and its target are known
        let Some(&(head, tmst, next)) = c.heads(&faithful.states[t0 + 1]).first() else {
            continue;
        };
        let correct = t0 + slot_offset(n, q, next, tmst);
        for j in 0..n {
            for k in 1..=q {
                if (j, k) == (next, tmst) {
                    continue;
                }
                let wrong = t0 + slot_offset(n, q, j, k);
                let start = faithful.states[t0].clone();

                // additive: the faithful plays plus one wrong copy
                if j == head {
                    audit.excluded_head_plays += 1;
                } else if j == next && k < tmst {
                    audit.excluded_overwritten += 1;
                } else {
                    audit.additive_effective += 1;
                    let expected = t0 + slot_offset(n, q, j, q + k);
                    let traj = run(c, start.clone(), l, |dt, s| {
                        let mut a = copy_action(c, s);
                        if t0 + dt == wrong {
                            a[j + 1] = true;
                        }
                        a
                    });
                    if first_violation(c, &traj.rewards).map(|d| t0 + d) == Some(expected) {
                        audit.additive_detected += 1;
                    } else {
                        audit.missed.push((r, j, k, "additive"));
                    }
                }

                // replace: the wrong copy instead of the correct one
                audit.replace_total += 1;
                let traj = run(c, start, l, |dt, s| {
                    let mut a = copy_action(c, s);
                    if t0 + dt == correct {
                        a[next + 1] = false;
                    }
                    if t0 + dt == wrong {
                        a[j + 1] = true;
                    }
                    a
                });
                if first_violation(c, &traj.rewards).map(|d| t0 + d) == Some(correct) {
                    audit.replace_detected += 1;
                } else {
                    audit.missed.push((r, j, k, "replace"));
                }
            }
        }
    }
    audit
}
