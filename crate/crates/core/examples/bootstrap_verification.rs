//! Verifying a submitted report against a local re-run with percentile
//! bootstrap intervals.

use recbench::datamodel::{generate_synthetic, SyntheticConfig};
use recbench::harness::{run_evaluation, EvalConfig, ModelChoice};
use recbench::scoring::{bootstrap_mean_ci, verify, BootstrapUnit, VerifyOptions};

fn main() -> recbench::error::Result<()> {
    println!(
        "CI of [0, 1]: {:?}",
        bootstrap_mean_ci(&[0.0, 1.0], 10_000, 0.05, 0)?
    );

    let dataset = generate_synthetic(&SyntheticConfig {
        n_users: 300,
        n_items: 200,
        n_events: 12_000,
        ..SyntheticConfig::default()
    })?;
    let cfg = EvalConfig {
        seed: 8,
        per_user_values: true,
        ..EvalConfig::default()
    };
    let (local, _) = run_evaluation(
        &dataset,
        &cfg,
        &ModelChoice::Cooccurrence { neighborhood: 50 },
    )?;

    let mut inflated = local.clone();
    for r in &mut inflated.results {
        r.value = (r.value + 0.1).min(1.0);
    }
    for values in inflated.per_user.iter_mut().flat_map(|p| p.values_mut()) {
        for v in values {
            *v = (*v + 0.1).min(1.0);
        }
    }

    for unit in [BootstrapUnit::Run, BootstrapUnit::User] {
        let opts = VerifyOptions {
            unit,
            ..VerifyOptions::default()
        };
        let honest = verify(&local, &local, &opts)?;
        let padded = verify(&local, &inflated, &opts)?;
        println!(
            "{unit:?}: honest copy passes = {}, inflated copy passes = {}",
            honest.overall_pass, padded.overall_pass
        );
    }
    Ok(())
}
