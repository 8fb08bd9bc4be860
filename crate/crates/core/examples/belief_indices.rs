//! Indices of a hidden two-state arm as its belief drifts after an observation.

use rmab::belief::{surrogate_beliefs, surrogate_index, tabularize, BeliefArm};
use rmab::index::{whittle_max, DEFAULT_TOL};

fn main() -> rmab::Result<()> {
    let arm = BeliefArm::new(0.1, 0.9, 1.0, 1.0)?;
    let k = 30;
    let spec = tabularize(&arm, k, 0)?;
    let omega = surrogate_beliefs(&arm, k);
    println!("stationary belief {:.4}", arm.stationary());
    println!("last seen  steps  belief  lambda+");
    for y in [true, false] {
        for steps in [1, 2, 5, 10, k] {
            let s = surrogate_index(y, steps, k);
            let index = whittle_max(&spec, s, 0.9, DEFAULT_TOL)?;
            println!(
                "{:>9}  {steps:>5}  {:.4}  {index:.5}",
                u8::from(y),
                omega[s]
            );
        }
    }
    Ok(())
}
