//! Instance families and the JSON instance format.
//!
//! An instance file looks like
//!
//! ```json
//! {
//!   "beta": 0.9, "threshold": 1.0, "rho": 0.9, "horizon_k": 30,
//!   "arms": [
//!     {"id": 0, "cost1": 1.0,
//!      "transition": [[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]]],
//!      "reward": [[[{"v": 0.0, "p": 1.0}], [{"v": 2.0, "p": 0.5}, {"v": 0.0, "p": 0.5}]],
//!                 [[{"v": 0.0, "p": 1.0}], [{"v": 1.0, "p": 1.0}]]]},
//!     {"p01": 0.2, "p11": 0.7, "r": 3.0, "cost1": 1.0}
//!   ]
//! }
//! ```
//!
//! `transition[s][a][s']` and `reward[s][a]` are indexed by state then
//! action (0 passive, 1 active). Arms given as `p01/p11/r` are hidden
//! two-state arms; `horizon_k` (default 30) sets their surrogate size. `id`
//! defaults to the arm's position.

use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{tabularize, BeliefArm, DEFAULT_HORIZON_K};
use crate::error::{Error, Result};
use crate::model::{check_beta, check_rho, ArmSpec, RewardDist, RmabInstance};
use crate::sim::{ArmProcess, Scenario};

pub const DEFAULT_BETA: f64 = 0.9;

/// `log_{1/(2e)}(1 - rho)`: the total success mass spread over the unreliable
/// arms of the claim instance.
pub fn claim1_mass(rho: f64) -> f64 {
    (1.0 - rho).ln() / (1.0 / (2.0 * std::f64::consts::E)).ln()
}

/// Success probability of each unreliable arm of the claim instance.
pub fn claim1_p(n: usize, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    if n < 2 {
        return Err(Error::arg("the claim instance needs n >= 2"));
    }
    if rho >= 1.0 {
        return Err(Error::arg("the claim instance needs rho < 1"));
    }
    let mass = claim1_mass(rho);
    let p = mass / (n - 1) as f64;
    if p >= 1.0 {
        let min_n = mass.floor() as usize + 2;
        return Err(Error::arg(format!(
            "n = {n} gives success probability {p} >= 1 at rho = {rho}; the smallest valid n is {min_n}"
        )));
    }
    Ok(p)
}

/// `n - 1` unreliable single-state arms paying `10R/p` with probability `p`,
/// and one arm paying `R` surely; unit costs.
pub fn claim1_instance(n: usize, rho: f64, threshold: f64) -> Result<RmabInstance> {
    if !(threshold > 0.0) {
        return Err(Error::arg("the claim instance needs R > 0"));
    }
    let p = claim1_p(n, rho)?;
    let mut arms = Vec::with_capacity(n);
    for i in 0..n - 1 {
        arms.push(ArmSpec::single_state_bernoulli(
            i,
            p,
            10.0 * threshold / p,
            1.0,
        )?);
    }
    arms.push(ArmSpec::single_state_bernoulli(n - 1, 1.0, threshold, 1.0)?);
    RmabInstance::new(arms, DEFAULT_BETA, threshold, rho)
}

/// Half reliable arms (nearly always in the paying state, stationary expected
/// reward exactly 1) and half unreliable arms paying `10 n^2` with stationary
/// probability `2/(10 n^2)`.
pub fn adversarial_instance(n: usize, seed: u64) -> Result<Vec<BeliefArm>> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::arg(format!(
            "the adversarial family needs a positive even n, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arms = Vec::with_capacity(n);
    for _ in 0..n / 2 {
        let p11 = rng.gen_range(0.990..0.999);
        let p01 = rng.gen_range(0.990..0.999);
        let stationary = p01 / (1.0 - p11 + p01);
        arms.push(BeliefArm::new(p01, p11, 1.0 / stationary, 1.0)?);
    }
    let r = 10.0 * (n * n) as f64;
    let omega = 2.0 / r;
    for _ in 0..n / 2 {
        let p11: f64 = rng.gen_range(0.05..0.3);
        let p01 = omega * (1.0 - p11) / (1.0 - omega);
        arms.push(BeliefArm::new(p01, p11, r, 1.0)?);
    }
    Ok(arms)
}

/// Random chains with rewards scaled so the stationary expected reward lies
/// in `[0.9, 1.1]`.
pub fn uniform_instance(n: usize, seed: u64) -> Result<Vec<BeliefArm>> {
    if n == 0 {
        return Err(Error::arg("the uniform family needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p01 = rng.gen_range(0.1..0.9);
            let p11 = rng.gen_range(0.1..0.9);
            let target: f64 = rng.gen_range(0.9..1.1);
            let stationary = p01 / (1.0 - p11 + p01);
            BeliefArm::new(p01, p11, target / stationary, 1.0)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Claim1,
    Adversarial,
    Uniform,
    File,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "claim1" => Ok(Family::Claim1),
            "adversarial" => Ok(Family::Adversarial),
            "uniform" => Ok(Family::Uniform),
            "file" => Ok(Family::File),
            _ => Err(Error::arg(format!("unknown family {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FamilyParams {
    pub family: Family,
    pub n: usize,
    pub rho: f64,
    pub threshold: f64,
    pub seed: u64,
    pub beta: f64,
}

/// Generates a document for a synthetic family.
pub fn generate(params: &FamilyParams) -> Result<InstanceDoc> {
    let p = params;
    let arms = match p.family {
        Family::Claim1 => {
            let mut inst = claim1_instance(p.n, p.rho, p.threshold)?;
            inst.beta = p.beta;
            return InstanceDoc::from_instance(&inst);
        }
        Family::Adversarial => adversarial_instance(p.n, p.seed)?,
        Family::Uniform => uniform_instance(p.n, p.seed)?,
        Family::File => return Err(Error::arg("file instances are loaded, not generated")),
    };
    let doc = InstanceDoc {
        beta: p.beta,
        threshold: p.threshold,
        rho: p.rho,
        horizon_k: DEFAULT_HORIZON_K,
        arms: arms.into_iter().map(InstanceArm::Belief).collect(),
    };
    doc.validate()?;
    Ok(doc)
}

/// One arm of an instance document.
#[derive(Clone, Debug, PartialEq)]
pub enum InstanceArm {
    Tabular(ArmSpec),
    Belief(BeliefArm),
}

/// A parsed instance file.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceDoc {
    pub beta: f64,
    pub threshold: f64,
    pub rho: f64,
    pub horizon_k: usize,
    pub arms: Vec<InstanceArm>,
}

#[derive(Serialize, Deserialize)]
struct Outcome {
    v: f64,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct TabularJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<usize>,
    cost1: f64,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<Vec<Outcome>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ArmJson {
    Tabular(TabularJson),
    Belief(BeliefArm),
}

#[derive(Serialize, Deserialize)]
struct DocJson {
    beta: f64,
    threshold: f64,
    rho: f64,
    #[serde(default = "default_horizon_k")]
    horizon_k: usize,
    arms: Vec<ArmJson>,
}

fn default_horizon_k() -> usize {
    DEFAULT_HORIZON_K
}

fn tabular_from_json(pos: usize, t: TabularJson) -> Result<ArmSpec> {
    let id = t.id.unwrap_or(pos);
    if t.reward.len() != t.transition.len() {
        return Err(Error::invariant(
            id,
            format!(
                "{} reward rows for {} states",
                t.reward.len(),
                t.transition.len()
            ),
        ));
    }
    let mut transition = Vec::with_capacity(t.transition.len());
    for (s, rows) in t.transition.into_iter().enumerate() {
        let pair: [Vec<f64>; 2] = rows.try_into().map_err(|rows: Vec<Vec<f64>>| {
            Error::invariant(
                id,
                format!("state {s} has {} transition rows, expected 2", rows.len()),
            )
        })?;
        transition.push(pair);
    }
    let mut reward = Vec::with_capacity(t.reward.len());
    for (s, rows) in t.reward.into_iter().enumerate() {
        if rows.len() != 2 {
            return Err(Error::invariant(
                id,
                format!(
                    "state {s} has {} reward distributions, expected 2",
                    rows.len()
                ),
            ));
        }
        let mut pair = Vec::with_capacity(2);
        for (a, outcomes) in rows.into_iter().enumerate() {
            pair.push(
                RewardDist::new(outcomes.into_iter().map(|o| (o.v, o.p)).collect())
                    .map_err(|e| Error::invariant(id, format!("reward ({s},{a}): {e}")))?,
            );
        }
        let pair: [RewardDist; 2] = pair.try_into().expect("two actions");
        reward.push(pair);
    }
    ArmSpec::from_dense(id, transition, reward, t.cost1)
}

fn tabular_to_json(arm: &ArmSpec) -> TabularJson {
    let n = arm.num_states();
    TabularJson {
        id: Some(arm.id()),
        cost1: arm.cost1(),
        transition: (0..n)
            .map(|s| (0..2).map(|a| arm.dense_row(s, a)).collect())
            .collect(),
        reward: (0..n)
            .map(|s| {
                (0..2)
                    .map(|a| {
                        arm.reward(s, a)
                            .outcomes()
                            .iter()
                            .map(|&(v, p)| Outcome { v, p })
                            .collect()
                    })
                    .collect()
            })
            .collect(),
    }
}

impl InstanceDoc {
    pub fn from_instance(instance: &RmabInstance) -> Result<Self> {
        Ok(InstanceDoc {
            beta: instance.beta,
            threshold: instance.threshold,
            rho: instance.rho,
            horizon_k: DEFAULT_HORIZON_K,
            arms: instance
                .arms
                .iter()
                .cloned()
                .map(InstanceArm::Tabular)
                .collect(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: DocJson = serde_json::from_str(text)?;
        let arms = raw
            .arms
            .into_iter()
            .enumerate()
            .map(|(i, a)| match a {
                ArmJson::Tabular(t) => tabular_from_json(i, t).map(InstanceArm::Tabular),
                ArmJson::Belief(b) => b.validate(i).map(|_| InstanceArm::Belief(b)),
            })
            .collect::<Result<Vec<_>>>()?;
        let doc = InstanceDoc {
            beta: raw.beta,
            threshold: raw.threshold,
            rho: raw.rho,
            horizon_k: raw.horizon_k,
            arms,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        let raw = DocJson {
            beta: self.beta,
            threshold: self.threshold,
            rho: self.rho,
            horizon_k: self.horizon_k,
            arms: self
                .arms
                .iter()
                .map(|a| match a {
                    InstanceArm::Tabular(t) => ArmJson::Tabular(tabular_to_json(t)),
                    InstanceArm::Belief(b) => ArmJson::Belief(*b),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("instance serialization cannot fail")
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_k == 0 {
            return Err(Error::arg("horizon_k must be at least 1"));
        }
        self.instance().map(|_| ())
    }

    /// Model arms, with hidden arms replaced by their surrogates.
    pub fn model_arms(&self) -> Result<Vec<ArmSpec>> {
        self.arms
            .iter()
            .enumerate()
            .map(|(i, a)| match a {
                InstanceArm::Tabular(t) => Ok(t.clone()),
                InstanceArm::Belief(b) => tabularize(b, self.horizon_k, i),
            })
            .collect()
    }

    pub fn instance(&self) -> Result<RmabInstance> {
        check_beta(self.beta)?;
        RmabInstance::new(self.model_arms()?, self.beta, self.threshold, self.rho)
    }

    /// Simulation view: hidden arms evolve as true two-state chains.
    pub fn scenario(&self) -> Result<Scenario> {
        let instance = self.instance()?;
        let processes = self
            .arms
            .iter()
            .map(|a| match a {
                InstanceArm::Tabular(_) => ArmProcess::Observed,
                InstanceArm::Belief(b) => ArmProcess::Hidden(*b),
            })
            .collect();
        Ok(Scenario {
            initial: vec![0; instance.len()],
            model: instance.arms,
            processes,
            horizon_k: self.horizon_k,
            beta: self.beta,
            threshold: self.threshold,
            rho: self.rho,
        })
    }

    pub fn belief_arms(&self) -> Vec<BeliefArm> {
        self.arms
            .iter()
            .filter_map(|a| match a {
                InstanceArm::Belief(b) => Some(*b),
                InstanceArm::Tabular(_) => None,
            })
            .collect()
    }
}

pub fn load_doc(path: &Path) -> Result<InstanceDoc> {
    InstanceDoc::from_json(&std::fs::read_to_string(path)?)
}

pub fn load_instance(path: &Path) -> Result<RmabInstance> {
    load_doc(path)?.instance()
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    load_doc(path)?.scenario()
}

pub fn save_doc(path: &Path, doc: &InstanceDoc) -> Result<()> {
    std::fs::write(path, doc.to_json() + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{whittle_max, whittle_min_from_max};

    #[test]
    fn claim1_parameters() {
        assert!((claim1_mass(0.9) - 1.3600).abs() < 1e-4);
        let inst = claim1_instance(51, 0.9, 1.0).unwrap();
        assert_eq!(inst.len(), 51);
        let p = claim1_p(51, 0.9).unwrap();
        assert!((p - 0.02720).abs() < 1e-5);
        let r = inst.arms[0].reward(0, 1);
        assert!((r.max() - 10.0 / p).abs() < 1e-9);
        assert!((r.max() - 367.6).abs() < 0.1);
        assert_eq!(inst.arms[50].reward(0, 1).outcomes(), &[(1.0, 1.0)]);
    }

    #[test]
    fn claim1_indices() {
        let inst = claim1_instance(51, 0.9, 1.0).unwrap();
        let lp = whittle_max(&inst.arms[0], 0, 0.9, 1e-7).unwrap();
        assert!((lp - 10.0).abs() < 1e-6);
        assert!((whittle_min_from_max(lp).unwrap() - 0.1).abs() < 1e-7);
        let last = whittle_max(&inst.arms[50], 0, 0.9, 1e-7).unwrap();
        assert!((last - 1.0).abs() < 1e-6);
    }

    #[test]
    fn claim1_too_small_names_minimum() {
        let err = claim1_instance(2, 0.9, 1.0).unwrap_err().to_string();
        assert!(err.contains("smallest valid n is 3"), "{err}");
        assert!(claim1_instance(3, 0.9, 1.0).is_ok());
    }

    #[test]
    fn adversarial_targets() {
        let arms = adversarial_instance(20, 4).unwrap();
        for a in &arms[..10] {
            assert!((a.stationary_reward() - 1.0).abs() < 1e-12);
        }
        for a in &arms[10..] {
            assert_eq!(a.r, 4000.0);
            assert!((a.stationary() - 5e-4).abs() < 1e-12);
            assert!((a.stationary_reward() - 2.0).abs() < 1e-9);
        }
        assert!(adversarial_instance(5, 0).is_err());
    }

    #[test]
    fn uniform_targets() {
        let arms = uniform_instance(50, 11).unwrap();
        for a in &arms {
            let e = a.stationary_reward();
            assert!((0.9..=1.1).contains(&e));
        }
        assert_ne!(
            uniform_instance(3, 1).unwrap(),
            uniform_instance(3, 2).unwrap()
        );
        assert_eq!(uniform_instance(1, 1).unwrap().len(), 1);
    }

    #[test]
    fn invalid_rows_cite_arm() {
        let text = r#"{"beta":0.9,"threshold":1,"rho":0.9,"arms":[
            {"id":7,"cost1":1,"transition":[[[0.9],[1.0]]],
             "reward":[[[{"v":0,"p":1}],[{"v":1,"p":1}]]]}]}"#;
        match InstanceDoc::from_json(text) {
            Err(Error::Invariant { arm, .. }) => assert_eq!(arm, 7),
            other => panic!("unexpected {other:?}"),
        }
        let text = r#"{"beta":0.9,"threshold":1,"rho":0.9,"arms":[
            {"cost1":-1,"transition":[[[1.0],[1.0]]],
             "reward":[[[{"v":0,"p":1}],[{"v":1,"p":1}]]]}]}"#;
        assert!(matches!(
            InstanceDoc::from_json(text),
            Err(Error::Invariant { arm: 0, .. })
        ));
    }

    #[test]
    fn syntax_errors_carry_position() {
        match InstanceDoc::from_json("{\n  \"beta\": 0.9,\n  oops\n}") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn documented_example_parses() {
        let text = r#"{
          "beta": 0.9, "threshold": 1.0, "rho": 0.9, "horizon_k": 30,
          "arms": [
            {"id": 0, "cost1": 1.0,
             "transition": [[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]]],
             "reward": [[[{"v": 0.0, "p": 1.0}], [{"v": 2.0, "p": 0.5}, {"v": 0.0, "p": 0.5}]],
                        [[{"v": 0.0, "p": 1.0}], [{"v": 1.0, "p": 1.0}]]]},
            {"p01": 0.2, "p11": 0.7, "r": 3.0, "cost1": 1.0}
          ]
        }"#;
        let doc = InstanceDoc::from_json(text).unwrap();
        let inst = doc.instance().unwrap();
        assert_eq!(inst.arms[0].num_states(), 2);
        assert_eq!(inst.arms[1].num_states(), 60);
        let again = InstanceDoc::from_json(&doc.to_json()).unwrap();
        assert_eq!(again, doc);
    }
}
