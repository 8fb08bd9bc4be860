//! Exact, Monte Carlo and Hoeffding estimates of Pr(sum of rewards >= R).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmab::model::RewardDist;
use rmab::prob::{
    exact_satisfaction_prob, hoeffding_lower_bound, mc_satisfaction_prob, SelectionContext,
};

fn main() -> rmab::Result<()> {
    let rewards: Vec<RewardDist> = (0..8)
        .map(|i| RewardDist::bernoulli(0.3 + 0.08 * i as f64, 1.0))
        .collect::<rmab::Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("   R   exact     mc(1e5)   hoeffding");
    for threshold in [1.0, 2.0, 3.0, 4.0, 5.0] {
        let ctx = SelectionContext::new(rewards.iter().collect(), threshold);
        let exact = exact_satisfaction_prob(&ctx, 1_000_000)?;
        let mc = mc_satisfaction_prob(&ctx, 100_000, &mut rng)?;
        let bound = hoeffding_lower_bound(&ctx)?;
        println!("{threshold:>4}   {exact:.5}   {mc:.5}   {bound:.5}");
    }
    Ok(())
}
