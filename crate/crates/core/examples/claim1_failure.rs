//! The instance where index-order greedy selection pays n times the optimum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmab::heuristics::{greedy_min, SelectorConfig};
use rmab::index::{IndexTable, DEFAULT_TOL};
use rmab::instances::claim1_instance;
use rmab::model::{ActionVector, JointState};
use rmab::prob::{exact_satisfaction_prob, SelectionContext, DEFAULT_ENUMERATION_CAP};

fn main() -> rmab::Result<()> {
    let n = 51;
    let inst = claim1_instance(n, 0.9, 1.0)?;
    let table = IndexTable::compute(&inst.arms, inst.beta, DEFAULT_TOL)?;
    let state = JointState::zeros(n);
    let cfg = SelectorConfig::new(inst.rho, inst.threshold);
    let greedy = greedy_min(
        &inst.arms,
        &state,
        &table,
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;

    let sure = ActionVector::from_selected(n, &[n - 1]);
    let ctx = SelectionContext::for_action(&inst.arms, &state, &sure, inst.threshold);
    let p = exact_satisfaction_prob(&ctx, DEFAULT_ENUMERATION_CAP)?;

    let costs = inst.costs();
    println!(
        "greedy_min plays {} arms, cost {}",
        greedy.count(),
        greedy.cost(&costs)
    );
    println!(
        "arm {} alone meets R with probability {p}, cost {}",
        n - 1,
        sure.cost(&costs)
    );
    Ok(())
}
