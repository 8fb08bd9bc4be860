//! Discounted cost of every heuristic on the adversarial and uniform families.

use rmab::cli::ExperimentConfig;

fn main() -> rmab::Result<()> {
    for family in ["adversarial", "uniform"] {
        let cfg = ExperimentConfig {
            family: Some(family.into()),
            n: Some(20),
            threshold: Some(5.0),
            seed: Some(1),
            reps: Some(10),
            ..Default::default()
        };
        println!("{family}");
        for res in cfg.run()? {
            let a = res.aggregate;
            println!(
                "  {:<17} {:>8.3} +- {:<7.3} violations {:.3}",
                a.policy, a.mean_cost, a.std_cost, a.violation_rate
            );
        }
    }
    Ok(())
}
