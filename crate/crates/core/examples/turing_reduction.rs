//! Compiles a Turing machine into a threshold bandit and audits the result.

use std::path::PathBuf;

use rmab::reduction::{verify_reduction, ReductionParams, TmSpec};

fn main() -> rmab::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    for name in ["toy_halting.json", "toy_looping.json"] {
        let tm = TmSpec::load(&dir.join(name))?;
        let rep = verify_reduction(&tm, &ReductionParams::new(2.0), 30)?;
        println!(
            "{name}: halts after {:?}, beta {:.5}, {} arm states",
            rep.tm_halts_after,
            rep.beta,
            rep.arm_states.iter().sum::<usize>()
        );
        println!(
            "  copy policy cost {:.3}, special-arm policy cost {:.3}",
            rep.faithful.discounted_cost, rep.special.discounted_cost
        );
        println!(
            "  tape checked for {} steps, wrong copies caught {:.0}%",
            rep.steps_checked,
            100.0 * rep.perturbation.detection_rate()
        );
    }
    Ok(())
}
