//! A model running as a separate process. The harness writes a request
//! directory (train.tsv, test_users.tsv, val_truth.tsv, request.json),
//! appends its path to the command line and reads back predictions.tsv.
//!
//! Needs `sh`, `awk`, `sort` and `cut`.

use recbench::datamodel::{generate_synthetic, SyntheticConfig};
use recbench::external::ExternalCommand;
use recbench::harness::{run_evaluation, test_ids, EvalConfig, ModelChoice};

const POPULARITY_SH: &str = r#"
dir="$1"
k=$(sed -n 's/.*"k": *\([0-9]*\).*/\1/p' "$dir/request.json")
tab=$(printf '\t')
awk -F"$tab" 'NR > 1 { c[$2] += $4 } END { for (i in c) print c[i] "\t" i }' "$dir/train.tsv" \
  | LC_ALL=C sort -t"$tab" -k1,1nr -k2,2 | head -n "$k" | cut -f2 > "$dir/top.txt"
{
  printf 'user_id\trank\titem_id\n'
  awk 'NR == FNR { top[++n] = $0; next } FNR > 1 { for (i = 1; i <= n; i++) print $1 "\t" i "\t" top[i] }' \
    "$dir/top.txt" "$dir/test_users.tsv"
} > "$dir/predictions.tsv"
"#;

fn main() -> recbench::error::Result<()> {
    let scripts =
        tempfile::tempdir().map_err(|e| recbench::error::Error::InvalidParameter(e.to_string()))?;
    let script = scripts.path().join("popularity.sh");
    std::fs::write(&script, POPULARITY_SH)
        .map_err(|e| recbench::error::Error::InvalidParameter(e.to_string()))?;
    let command = ExternalCommand::parse(&format!("sh {}", script.display()))?;

    let dataset = generate_synthetic(&SyntheticConfig {
        n_users: 200,
        n_items: 150,
        n_events: 8_000,
        ..SyntheticConfig::default()
    })?;
    let cfg = EvalConfig {
        seed: 2,
        perturbation_sample: 50,
        ..EvalConfig::default()
    };
    let (external, _) = run_evaluation(&dataset, &cfg, &ModelChoice::External(command))?;
    let (native, _) = run_evaluation(
        &dataset,
        &cfg,
        &ModelChoice::Popularity {
            exclude_seen: false,
        },
    )?;
    for test in [test_ids::HR, test_ids::NDCG] {
        println!(
            "{test}: external {:?}\n{:>width$}  native   {:?}",
            external.test_values(test).values().collect::<Vec<_>>(),
            "",
            native.test_values(test).values().collect::<Vec<_>>(),
            width = test.len()
        );
    }
    Ok(())
}
