//! Learning a min-direction index from samples and comparing it with bisection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmab::index::{qwi_tabular, whittle_max, whittle_min_from_max, QwiConfig, DEFAULT_TOL};
use rmab::model::ArmSpec;

fn main() -> rmab::Result<()> {
    let arm = ArmSpec::single_state_bernoulli(0, 0.5, 2.0, 1.0)?;
    let exact = whittle_min_from_max(whittle_max(&arm, 0, 0.9, DEFAULT_TOL)?)?;
    println!("exact lambda- {exact:.4}");
    for updates in [1_000, 10_000, 50_000] {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let est = qwi_tabular(&arm, 0.9, updates, &QwiConfig::default(), &mut rng)?;
        println!("{updates:>6} updates: {:.4}", est.lambda_minus[0]);
    }
    Ok(())
}
