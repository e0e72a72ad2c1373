//! Per-group breakdowns of one run: country, gender, activity, item
//! popularity and cold start.

use recbench::datamodel::{generate_synthetic, SyntheticConfig};
use recbench::harness::{run_evaluation, EvalConfig, ModelChoice};

fn main() -> recbench::error::Result<()> {
    let dataset = generate_synthetic(&SyntheticConfig {
        n_users: 400,
        n_items: 300,
        n_events: 16_000,
        ..SyntheticConfig::default()
    })?;
    let cfg = EvalConfig {
        seed: 3,
        ..EvalConfig::default()
    };
    let (report, _) = run_evaluation(
        &dataset,
        &cfg,
        &ModelChoice::Cooccurrence { neighborhood: 50 },
    )?;
    let run = &report.runs[0];
    for slice in &run.slices {
        println!(
            "{} (worst group HR {:.4}, spread {:.4})",
            slice.kind.as_str(),
            slice.worst_group_hr,
            slice.hr_std_across_groups
        );
        for (label, group) in &slice.groups {
            let flag = if group.low_support {
                "  low support"
            } else {
                ""
            };
            println!(
                "  {label:<10} HR {:.4}  n={}{flag}",
                group.metrics.hr, group.members
            );
        }
    }
    Ok(())
}
