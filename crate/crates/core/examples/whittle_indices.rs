//! Max- and min-direction indices of a small arm, and their duality.

use rmab::index::{
    check_indexability, default_grid, whittle_max, whittle_min, whittle_min_from_max, DEFAULT_TOL,
};
use rmab::model::{ArmSpec, RewardDist};

fn main() -> rmab::Result<()> {
    // state 1 pays more but playing it tends to drop the arm back to state 0
    let arm = ArmSpec::from_dense(
        0,
        vec![
            [vec![0.7, 0.3], vec![0.9, 0.1]],
            [vec![0.2, 0.8], vec![0.6, 0.4]],
        ],
        vec![
            [RewardDist::point(0.0), RewardDist::bernoulli(0.5, 1.0)?],
            [RewardDist::point(0.0), RewardDist::bernoulli(0.8, 3.0)?],
        ],
        1.0,
    )?;
    let beta = 0.9;
    let grid = default_grid(&arm, 64);
    println!(
        "indexable on grid: {}",
        check_indexability(&arm, beta, &grid)?.indexable_on_grid
    );
    println!("state  lambda+    1/lambda+  lambda- (direct)");
    for s in 0..arm.num_states() {
        let plus = whittle_max(&arm, s, beta, DEFAULT_TOL)?;
        let minus = whittle_min(&arm, s, beta, DEFAULT_TOL)?;
        println!(
            "{s:>5}  {plus:<9.6}  {:<9.6}  {minus:.6}",
            whittle_min_from_max(plus)?
        );
    }
    Ok(())
}
