//! Episodes, discounted-cost accounting and repetition aggregates.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::belief::{tabularize, BeliefArm, HiddenArm, DEFAULT_HORIZON_K};
use crate::error::{Error, Result};
use crate::heuristics::{IndexCache, Policy, PolicyKind, Selector, SelectorConfig};
use crate::model::{
    check_beta, check_rho, derive_seed, discounted_sum, meets_threshold, sample_next, ActionVector,
    ArmSpec, EpisodeRng, JointState, RmabInstance,
};

pub const DEFAULT_HORIZON: usize = 10;
pub const DEFAULT_REPS: usize = 10;

/// How an arm evolves in simulation.
#[derive(Clone, Debug, PartialEq)]
pub enum ArmProcess {
    /// The policy sees the true state of this arm.
    Observed,
    /// A hidden chain; the policy sees the surrogate state of its model arm.
    Hidden(BeliefArm),
}

/// What policies see (`model`) together with how each arm really evolves.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub model: Vec<ArmSpec>,
    pub processes: Vec<ArmProcess>,
    pub initial: Vec<usize>,
    pub horizon_k: usize,
    pub beta: f64,
    pub threshold: f64,
    pub rho: f64,
}

impl Scenario {
    /// Fully observed arms starting in state 0.
    pub fn observed(instance: RmabInstance) -> Self {
        let n = instance.len();
        Scenario {
            model: instance.arms,
            processes: vec![ArmProcess::Observed; n],
            initial: vec![0; n],
            horizon_k: DEFAULT_HORIZON_K,
            beta: instance.beta,
            threshold: instance.threshold,
            rho: instance.rho,
        }
    }

    /// Hidden two-state arms, seen by policies through surrogates with
    /// horizon `horizon_k`.
    pub fn hidden(
        arms: &[BeliefArm],
        horizon_k: usize,
        beta: f64,
        threshold: f64,
        rho: f64,
    ) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::arg("a scenario needs at least one arm"));
        }
        check_beta(beta)?;
        check_rho(rho)?;
        let model = arms
            .iter()
            .enumerate()
            .map(|(i, a)| tabularize(a, horizon_k, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scenario {
            model,
            processes: arms.iter().map(|&a| ArmProcess::Hidden(a)).collect(),
            initial: vec![0; arms.len()],
            horizon_k,
            beta,
            threshold,
            rho,
        })
    }

    pub fn len(&self) -> usize {
        self.model.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model.is_empty()
    }

    /// The instance formed by the model arms.
    pub fn instance(&self) -> Result<RmabInstance> {
        RmabInstance::new(self.model.clone(), self.beta, self.threshold, self.rho)
    }

    pub fn costs(&self) -> Vec<f64> {
        self.model.iter().map(|a| a.cost1()).collect()
    }
}

/// One time step of an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub action: ActionVector,
    /// Realized reward of the selected arms.
    pub reward_sum: f64,
    pub cost: f64,
    pub constraint_met: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub steps: Vec<StepRecord>,
    pub discounted_cost: f64,
    pub violations: usize,
}

enum Live {
    Observed(usize),
    Hidden(HiddenArm),
}

/// Runs `policy` for `horizon` steps. Arm `i` draws everything from stream
/// `i` of `rng`; the policy draws from the policy stream.
pub fn run_episode(
    scenario: &Scenario,
    policy: &mut dyn Policy,
    horizon: usize,
    rng: &mut EpisodeRng,
) -> Result<SimResult> {
    if horizon == 0 {
        return Err(Error::arg("horizon must be at least 1"));
    }
    let n = scenario.len();
    if rng.arms.len() < n {
        return Err(Error::arg("fewer random streams than arms"));
    }
    policy.reset();
    let mut live: Vec<Live> = scenario
        .processes
        .iter()
        .enumerate()
        .map(|(i, p)| match p {
            ArmProcess::Observed => Live::Observed(scenario.initial[i]),
            ArmProcess::Hidden(arm) => {
                Live::Hidden(HiddenArm::start(*arm, scenario.horizon_k, &mut rng.arms[i]))
            }
        })
        .collect();
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let state = JointState(
            live.iter()
                .map(|l| match l {
                    Live::Observed(s) => *s,
                    Live::Hidden(h) => h.surrogate,
                })
                .collect(),
        );
        state.validate(&scenario.model)?;
        let action = policy.select(&scenario.model, &state, &mut rng.policy)?;
        if action.len() != n {
            return Err(Error::arg(format!(
                "policy returned {} actions for {n} arms",
                action.len()
            )));
        }
        let mut reward_sum = 0.0;
        let mut cost = 0.0;
        for (i, slot) in live.iter_mut().enumerate() {
            let active = action.0[i];
            let stream = &mut rng.arms[i];
            let reward = match slot {
                Live::Observed(s) => {
                    let arm = &scenario.model[i];
                    let a = usize::from(active);
                    let r = arm.reward(*s, a).sample(stream);
                    *s = sample_next(arm, *s, a, stream);
                    r
                }
                Live::Hidden(h) => h.advance(active, stream),
            };
            if active {
                reward_sum += reward;
                cost += scenario.model[i].cost1();
            }
        }
        steps.push(StepRecord {
            constraint_met: meets_threshold(reward_sum, scenario.threshold),
            action,
            reward_sum,
            cost,
        });
    }
    let costs: Vec<f64> = steps.iter().map(|s| s.cost).collect();
    Ok(SimResult {
        discounted_cost: discounted_sum(&costs, scenario.beta),
        violations: steps.iter().filter(|s| !s.constraint_met).count(),
        steps,
    })
}

/// Builds a fresh policy for each episode.
pub struct PolicySpec {
    pub name: String,
    make: Box<dyn Fn() -> Result<Box<dyn Policy + Send>> + Send + Sync>,
}

impl PolicySpec {
    pub fn new(
        name: impl Into<String>,
        make: impl Fn() -> Result<Box<dyn Policy + Send>> + Send + Sync + 'static,
    ) -> Self {
        PolicySpec {
            name: name.into(),
            make: Box::new(make),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Policy + Send>> {
        (self.make)()
    }
}

/// One spec per kind, all sharing `cache`.
pub fn standard_policies(
    kinds: &[PolicyKind],
    cfg: SelectorConfig,
    cache: Arc<IndexCache>,
) -> Result<Vec<PolicySpec>> {
    cfg.validate()?;
    Ok(kinds
        .iter()
        .map(|&kind| {
            let cache = cache.clone();
            PolicySpec::new(kind.name(), move || {
                Ok(Box::new(Selector::new(kind, cfg, cache.clone())?) as Box<dyn Policy + Send>)
            })
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub policy: String,
    pub mean_cost: f64,
    /// Sample standard deviation over repetitions (0 for one repetition).
    pub std_cost: f64,
    /// Violated steps over all steps of all repetitions.
    pub violation_rate: f64,
    pub reps: usize,
    /// Largest discounted cost the steps after the horizon could add.
    pub truncation_bound: f64,
}

impl Aggregate {
    pub fn from_runs(policy: &str, runs: &[SimResult], beta: f64, max_step_cost: f64) -> Self {
        let reps = runs.len();
        let costs: Vec<f64> = runs.iter().map(|r| r.discounted_cost).collect();
        let mean = costs.iter().sum::<f64>() / reps.max(1) as f64;
        let std = if reps > 1 {
            (costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt()
        } else {
            0.0
        };
        let steps: usize = runs.iter().map(|r| r.steps.len()).sum();
        let violations: usize = runs.iter().map(|r| r.violations).sum();
        let horizon = runs.first().map_or(0, |r| r.steps.len());
        Aggregate {
            policy: policy.to_string(),
            mean_cost: mean,
            std_cost: std,
            violation_rate: if steps == 0 {
                0.0
            } else {
                violations as f64 / steps as f64
            },
            reps,
            truncation_bound: beta.powi(horizon as i32) * max_step_cost / (1.0 - beta),
        }
    }
}

/// All episodes of one policy plus their aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyRuns {
    pub aggregate: Aggregate,
    pub runs: Vec<SimResult>,
}

/// Runs every policy for `reps` repetitions of `horizon` steps. Repetition
/// `k` uses the scenario `scenario(k)` and the seed `derive_seed(base_seed, k)`
/// for every policy, so policies face the same random streams.
pub fn run_experiment(
    scenario: &(dyn Fn(usize) -> Result<Scenario> + Sync),
    policies: &[PolicySpec],
    reps: usize,
    horizon: usize,
    base_seed: u64,
) -> Result<Vec<PolicyRuns>> {
    if reps == 0 {
        return Err(Error::arg("at least one repetition is required"));
    }
    let scenarios = (0..reps).map(scenario).collect::<Result<Vec<_>>>()?;
    let beta = scenarios[0].beta;
    let max_step_cost = scenarios
        .iter()
        .map(|s| s.costs().iter().sum::<f64>())
        .fold(0.0, f64::max);
    policies
        .iter()
        .map(|spec| {
            let runs = scenarios
                .par_iter()
                .enumerate()
                .map(|(k, sc)| {
                    let mut policy = spec.build()?;
                    let mut rng = EpisodeRng::new(derive_seed(base_seed, k as u64), sc.len());
                    run_episode(sc, policy.as_mut(), horizon, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PolicyRuns {
                aggregate: Aggregate::from_runs(&spec.name, &runs, beta, max_step_cost),
                runs,
            })
        })
        .collect()
}

pub const RUN_CSV_HEADER: &str = "policy,rep,step,cost,reward_sum,constraint_met";
pub const AGGREGATE_CSV_HEADER: &str = "policy,mean_cost,std_cost,violation_rate";

/// Per-step rows; steps are numbered from 1.
pub fn write_runs_csv<W: Write>(results: &[PolicyRuns], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{RUN_CSV_HEADER}")?;
    for pr in results {
        for (rep, run) in pr.runs.iter().enumerate() {
            for (t, s) in run.steps.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    pr.aggregate.policy,
                    rep,
                    t + 1,
                    s.cost,
                    s.reward_sum,
                    u8::from(s.constraint_met)
                )?;
            }
        }
    }
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(results: &[PolicyRuns], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{AGGREGATE_CSV_HEADER}")?;
    for pr in results {
        let a = &pr.aggregate;
        writeln!(
            out,
            "{},{},{},{}",
            a.policy, a.mean_cost, a.std_cost, a.violation_rate
        )?;
    }
    Ok(())
}
