//! Seeded event-level partition and the rotation of train, validation and
//! test roles across runs.

use recbench::datamodel::{generate_synthetic, SyntheticConfig};
use recbench::folds::{materialize_split, partition, rotation_schedule};

fn main() -> recbench::error::Result<()> {
    let dataset = generate_synthetic(&SyntheticConfig {
        n_users: 100,
        n_items: 80,
        n_events: 2_003,
        n_artists: 20,
        ..SyntheticConfig::default()
    })?;
    let plan = partition(&dataset, 5, 7)?;
    println!("fold sizes {:?}", plan.fold_sizes());
    for split in rotation_schedule(5)? {
        let mat = materialize_split(&dataset, &plan, &split)?;
        println!(
            "run {}: train {:?} val {} test {} | {} train events, {} test users, {} cold start",
            split.run_id,
            split.train_folds,
            split.val_fold,
            split.test_fold,
            mat.train_events.len(),
            mat.test_truth.len(),
            mat.cold_start_users.len()
        );
    }
    Ok(())
}
