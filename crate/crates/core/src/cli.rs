//! Command-line front end: `gen`, `eval`, `verify` and `report`.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success (for `verify`: every test passed) |
//! | 1 | `verify` ran but at least one test failed |
//! | 2 | usage error |
//! | 3 | invalid parameter |
//! | 4 | incompatible reports |
//! | 5 | input or parse error |
//! | 6 | model failure |
//! | 10 | any other error |

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::datamodel::{generate_synthetic, load_dataset, DatasetPaths, SyntheticConfig};
use crate::error::{Error, Result};
use crate::folds::TruthPolicy;
use crate::harness::{run_evaluation, test_ids, EvalConfig, ModelChoice};
use crate::model::HyperparameterSetting;
use crate::report::{to_canonical_json, RunReport};
use crate::scoring::{verify, BootstrapUnit, VerifyOptions, DEFAULT_ALPHA, DEFAULT_N_BOOT};
use crate::slices::SliceKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INVALID_PARAMETER: i32 = 3;
pub const EXIT_INCOMPATIBLE: i32 = 4;
pub const EXIT_INPUT: i32 = 5;
pub const EXIT_MODEL: i32 = 6;
pub const EXIT_OTHER: i32 = 10;

/// Maps an error to its documented exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter(_)
        | Error::InvalidK(_)
        | Error::InvalidCutoff
        | Error::InvalidCatalogSize
        | Error::UnknownTest(_)
        | Error::UnknownSliceKind(_)
        | Error::TooFewEvents { .. } => EXIT_INVALID_PARAMETER,
        Error::IncompatibleReports(_) => EXIT_INCOMPATIBLE,
        Error::MalformedRow { .. }
        | Error::DanglingReference { .. }
        | Error::DuplicateId { .. }
        | Error::EmptyTraining
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::Json(_)
        | Error::MissingTestValue { .. }
        | Error::DuplicateTestValue { .. }
        | Error::EmptyInput => EXIT_INPUT,
        Error::ModelQueryFailure { .. }
        | Error::UnknownItem(_)
        | Error::BudgetExceeded { .. }
        | Error::ExternalModelFailure { .. }
        | Error::MalformedPredictions(_)
        | Error::Timeout { .. } => EXIT_MODEL,
        _ => EXIT_OTHER,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "recbench",
    version,
    about = "Offline evaluation harness for top-K recommenders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic Zipf-distributed dataset as three TSV files.
    Gen(GenArgs),
    /// Run the full cross-validated evaluation and write a report.
    Eval(EvalArgs),
    /// Compare a re-executed report against a submitted one.
    Verify(VerifyArgs),
    /// Render a report as a markdown table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    pub users: usize,
    #[arg(long, default_value_t = 500)]
    pub items: usize,
    #[arg(long, default_value_t = 50_000)]
    pub events: usize,
    #[arg(long, default_value_t = 1.1)]
    pub exponent: f64,
    #[arg(long, default_value_t = 100)]
    pub artists: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Directory receiving events.tsv, items.tsv and users.tsv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory holding events.tsv, items.tsv and users.tsv; individual
    /// paths override it.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long)]
    pub users: Option<PathBuf>,
    #[arg(long, default_value_t = crate::harness::DEFAULT_TOP_K)]
    pub k: usize,
    #[arg(long, default_value_t = crate::folds::DEFAULT_FOLDS)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// random, popularity, cooc, oracle, or external:<command line>
    #[arg(long, default_value = "popularity")]
    pub model: String,
    /// Popularity baseline skips items already in the user's history.
    #[arg(long)]
    pub exclude_seen: bool,
    /// Drop items already seen in training from the ground truth.
    #[arg(long)]
    pub drop_seen_truth: bool,
    /// Comma-separated test ids averaged into the final score.
    #[arg(long, value_delimiter = ',')]
    pub tests: Option<Vec<String>>,
    #[arg(long, default_value_t = crate::model::DEFAULT_BUDGET)]
    pub budget: usize,
    #[arg(long, default_value_t = crate::behavioral::DEFAULT_SAMPLE_USERS)]
    pub perturb_sample: usize,
    #[arg(long, default_value_t = crate::external::DEFAULT_TIMEOUT.as_secs())]
    pub timeout_secs: u64,
    /// Hyperparameter passed to the model, as key=value; repeatable.
    #[arg(long = "set", value_parser = parse_key_value)]
    pub settings: Vec<(String, String)>,
    /// Record per-user values for user-level bootstrap verification.
    #[arg(long)]
    pub per_user: bool,
    #[arg(long)]
    pub parallel_runs: bool,
    /// Report path; the fold plan is written next to it as `*.folds.json`.
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum UnitArg {
    Run,
    User,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Report produced by re-running the evaluation.
    pub local: PathBuf,
    /// Report submitted for verification.
    pub remote: PathBuf,
    #[arg(long, default_value_t = DEFAULT_N_BOOT)]
    pub n_boot: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = UnitArg::Run)]
    pub unit: UnitArg,
    /// Where to write the verification result as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub report: PathBuf,
}

fn parse_key_value(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

/// Parses `args` (including the program name) and runs the command,
/// writing human-readable output to `out` and diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Verify(a) => cmd_verify(&a, out),
        Command::Report(a) => cmd_report(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Entry point for the binary.
pub fn main_from_env() -> i32 {
    run_with(
        std::env::args_os(),
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    )
}

fn say(out: &mut dyn Write, msg: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{msg}").map_err(|e| Error::io("writing output", e))
}

pub fn cmd_gen(args: &GenArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = SyntheticConfig {
        n_users: args.users,
        n_items: args.items,
        n_events: args.events,
        zipf_exponent: args.exponent,
        n_artists: args.artists,
        seed: args.seed,
        ..SyntheticConfig::default()
    };
    let ds = generate_synthetic(&cfg)?;
    ds.write_dir(&args.out_dir)?;
    say(
        out,
        format!(
            "wrote {} events, {} items, {} users to {}",
            ds.events().len(),
            ds.items().len(),
            ds.users().len(),
            args.out_dir.display()
        ),
    )?;
    Ok(EXIT_OK)
}

fn resolve_paths(args: &EvalArgs) -> Result<(PathBuf, PathBuf, PathBuf)> {
    let base = args.data_dir.as_deref().map(DatasetPaths::in_dir);
    let pick = |explicit: &Option<PathBuf>, fallback: Option<&PathBuf>, name: &str| {
        explicit
            .clone()
            .or_else(|| fallback.cloned())
            .ok_or_else(|| Error::InvalidParameter(format!("--{name} (or --data-dir) is required")))
    };
    Ok((
        pick(&args.events, base.as_ref().map(|b| &b.events), "events")?,
        pick(&args.items, base.as_ref().map(|b| &b.items), "items")?,
        pick(&args.users, base.as_ref().map(|b| &b.users), "users")?,
    ))
}

/// Path of the fold-plan audit file written next to a report.
pub fn fold_plan_path(report: &Path) -> PathBuf {
    report.with_extension("folds.json")
}

pub fn eval_config(args: &EvalArgs) -> EvalConfig {
    let mut cfg = EvalConfig {
        k: args.k,
        folds: args.folds,
        seed: args.seed,
        perturbation_sample: args.perturb_sample,
        budget: args.budget,
        truth_policy: if args.drop_seen_truth {
            TruthPolicy::DropSeen
        } else {
            TruthPolicy::KeepSeen
        },
        setting: args
            .settings
            .iter()
            .cloned()
            .collect::<HyperparameterSetting>(),
        parallel_runs: args.parallel_runs,
        per_user_values: args.per_user,
        ..EvalConfig::default()
    };
    if let Some(tests) = &args.tests {
        cfg.included_tests = tests
            .iter()
            .map(|t| t.trim().to_owned())
            .filter(|t| !t.is_empty())
            .collect();
    }
    cfg
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = eval_config(args);
    cfg.validate()?;
    let mut model = ModelChoice::parse(&args.model, args.seed, args.exclude_seen)?;
    if let ModelChoice::External(cmd) = &mut model {
        cmd.timeout = Duration::from_secs(args.timeout_secs);
    }
    let (events, items, users) = resolve_paths(args)?;
    let ds = load_dataset(&events, &items, &users)?;
    let (report, plan) = run_evaluation(&ds, &cfg, &model)?;
    report.write(&args.out)?;
    let plan_path = fold_plan_path(&args.out);
    plan.write_json(&plan_path)?;
    say(
        out,
        format!(
            "model {}: final score {:.4} over {} runs; report {}, fold plan {}",
            report.model,
            report.final_score,
            report.runs.len(),
            args.out.display(),
            plan_path.display()
        ),
    )?;
    Ok(EXIT_OK)
}

pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let local = RunReport::read(&args.local)?;
    let remote = RunReport::read(&args.remote)?;
    let opts = VerifyOptions {
        n_boot: args.n_boot,
        alpha: args.alpha,
        seed: args.seed,
        unit: match args.unit {
            UnitArg::Run => BootstrapUnit::Run,
            UnitArg::User => BootstrapUnit::User,
        },
    };
    let result = verify(&local, &remote, &opts)?;
    for (test, t) in &result.tests {
        say(
            out,
            format!(
                "{} {test}: local {:.4} [{:.4}, {:.4}], remote {:.4} [{:.4}, {:.4}]",
                if t.pass { "PASS" } else { "FAIL" },
                t.local_mean,
                t.local_ci.0,
                t.local_ci.1,
                t.remote_mean,
                t.remote_ci.0,
                t.remote_ci.1
            ),
        )?;
    }
    say(
        out,
        if result.overall_pass {
            "verification passed"
        } else {
            "verification FAILED"
        },
    )?;
    if let Some(path) = &args.out {
        std::fs::write(path, to_canonical_json(&result)?)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(if result.overall_pass {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<i32> {
    let report = RunReport::read(&args.report)?;
    out.write_all(render_report(&report).as_bytes())
        .map_err(|e| Error::io("writing output", e))?;
    Ok(EXIT_OK)
}

const LOW_SUPPORT_MARK: &str = " (low support)";

/// Markdown rendering of a report: test values per run, slice breakdowns
/// and the final score. Groups below the support floor carry a marker.
pub fn render_report(report: &RunReport) -> String {
    let runs: Vec<usize> = report.runs.iter().map(|r| r.run_id).collect();
    let mut s = String::new();
    let _ = writeln!(s, "# {}\n", report.model);
    let _ = writeln!(
        s,
        "k = {}, folds = {}, seed = {}, dataset {}\n",
        report.k, report.folds, report.fold_seed, report.dataset_digest
    );

    let header = |s: &mut String, first: &str| {
        let _ = write!(s, "| {first} |");
        for r in &runs {
            let _ = write!(s, " run {r} |");
        }
        let _ = writeln!(s, " mean |");
        let _ = write!(s, "|---|");
        for _ in &runs {
            let _ = write!(s, "---|");
        }
        let _ = writeln!(s, "---|");
    };
    let test_row = |s: &mut String, test: &str| {
        let values = report.test_values(test);
        let _ = write!(s, "| {test} |");
        for r in &runs {
            match values.get(r) {
                Some(v) => {
                    let _ = write!(s, " {v:.4} |");
                }
                None => {
                    let _ = write!(s, " - |");
                }
            }
        }
        let mean = values.values().sum::<f64>() / values.len().max(1) as f64;
        let _ = writeln!(s, " {mean:.4} |");
    };

    let _ = writeln!(s, "## Scored tests\n");
    header(&mut s, "test");
    for test in &report.included_tests {
        test_row(&mut s, test);
    }
    let _ = writeln!(s, "\nFinal score: {:.4}\n", report.final_score);

    let others: Vec<&str> = test_ids::ALL
        .iter()
        .copied()
        .filter(|t| !report.included_tests.iter().any(|i| i == t))
        .filter(|t| !report.test_values(t).is_empty())
        .collect();
    if !others.is_empty() {
        let _ = writeln!(s, "## Other tests\n");
        header(&mut s, "test");
        for test in others {
            test_row(&mut s, test);
        }
        s.push('\n');
    }

    for kind in SliceKind::ALL {
        let labels: std::collections::BTreeSet<&String> = report
            .runs
            .iter()
            .flat_map(|r| r.slices.iter().filter(|sl| sl.kind == kind))
            .flat_map(|sl| sl.groups.keys())
            .collect();
        if labels.is_empty() {
            continue;
        }
        let _ = writeln!(s, "## Slice: {} (hit rate)\n", kind.as_str());
        header(&mut s, "group");
        for label in labels {
            let _ = write!(s, "| {label} |");
            let mut sum = 0.0;
            let mut n = 0;
            for run in &report.runs {
                let group = run
                    .slices
                    .iter()
                    .find(|sl| sl.kind == kind)
                    .and_then(|sl| sl.groups.get(label));
                match group {
                    Some(g) => {
                        sum += g.metrics.hr;
                        n += 1;
                        let mark = if g.low_support { LOW_SUPPORT_MARK } else { "" };
                        let _ = write!(s, " {:.4} n={}{mark} |", g.metrics.hr, g.members);
                    }
                    None => {
                        let _ = write!(s, " - |");
                    }
                }
            }
            let _ = writeln!(s, " {:.4} |", sum / n.max(1) as f64);
        }
        s.push('\n');
    }
    s
}
