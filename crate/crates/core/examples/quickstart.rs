//! Generate a small synthetic dataset, evaluate the popularity baseline and
//! print the per-test means and final score.

use recbench::datamodel::{generate_synthetic, SyntheticConfig};
use recbench::harness::{run_evaluation, EvalConfig, ModelChoice};

fn main() -> recbench::error::Result<()> {
    let dataset = generate_synthetic(&SyntheticConfig {
        n_users: 300,
        n_items: 200,
        n_events: 12_000,
        ..SyntheticConfig::default()
    })?;
    let cfg = EvalConfig {
        seed: 1,
        ..EvalConfig::default()
    };
    let (report, plan) = run_evaluation(
        &dataset,
        &cfg,
        &ModelChoice::Popularity { exclude_seen: true },
    )?;

    println!(
        "model {} on dataset {}",
        report.model,
        &report.dataset_digest[..12]
    );
    println!("fold sizes {:?}", plan.fold_sizes());
    for test in &report.included_tests {
        let values = report.test_values(test);
        let mean = values.values().sum::<f64>() / values.len() as f64;
        println!("{test:<24} {mean:.4}");
    }
    println!("final score {:.4}", report.final_score);
    Ok(())
}
