//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recbench::behavioral::error_distance_test;
use recbench::datamodel::{generate_synthetic, SyntheticConfig};
use recbench::error::Error;
use recbench::folds::{materialize_split, partition, rotation_schedule};
use recbench::harness::{run_evaluation, test_ids, EvalConfig, ModelChoice, ModelFactory};
use recbench::metrics::{evaluate_standard, truths_from_map, RankedList};
use recbench::model::{
    recommend_batch, train, FitContext, HyperparameterSetting, ModelHandle, PopularityRec, Query,
    TrainBudget,
};
use recbench::report::RunReport;
use recbench::scoring::{bootstrap_mean_ci, verify, VerifyOptions, DEFAULT_N_BOOT};
use recbench::slices::SliceKind;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn metric_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let inst = common::Instance::random(&mut rng);
        check(
            inst.users.len() <= 50 && inst.k <= 10,
            "instance outside bounds",
        )?;
        let r = evaluate_standard(&inst.preds(), &inst.truths(), inst.k, 100)
            .map_err(|e| e.to_string())?;
        let e = common::brute_force(&inst);
        for (got, want) in [r.hr_at_k, r.mrr_at_k, r.ndcg_at_k, r.map_at_k]
            .iter()
            .zip(e)
        {
            let diff = (got - want).abs();
            worst = worst.max(diff);
            check(
                diff <= 1e-9,
                format!("instance {i}: {got} vs reference {want}"),
            )?;
        }
    }
    let elapsed = started.elapsed();
    check(
        elapsed < Duration::from_secs(10),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "100 instances, max |diff| {worst:.1e}, {elapsed:.2?}"
    ))
}

fn fold_protocol() -> Outcome {
    let ds = generate_synthetic(&SyntheticConfig {
        n_users: 200,
        n_items: 300,
        n_events: 10_000,
        seed: 5,
        ..SyntheticConfig::default()
    })
    .map_err(|e| e.to_string())?;
    check(ds.events().len() == 10_000, "event count")?;
    let plan = partition(&ds, 5, 1).map_err(|e| e.to_string())?;
    let sizes = plan.fold_sizes();
    check(
        sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1,
        format!("sizes {sizes:?}"),
    )?;
    let schedule = rotation_schedule(5).map_err(|e| e.to_string())?;
    for role in [
        |r: &recbench::folds::RunSplit| r.test_fold,
        |r: &recbench::folds::RunSplit| r.val_fold,
    ] {
        let folds: BTreeSet<usize> = schedule.iter().map(role).collect();
        check(folds.len() == 5, "a fold repeats in one role")?;
    }
    let first = &schedule[0];
    check(
        first.train_folds == BTreeSet::from([0, 1, 2])
            && first.val_fold == 3
            && first.test_fold == 4,
        format!("first run {first:?}"),
    )?;
    check(
        plan == partition(&ds, 5, 1).unwrap(),
        "same seed gave a different plan",
    )?;
    check(
        plan.assignment != partition(&ds, 5, 2).unwrap().assignment,
        "seeds 1 and 2 agree",
    )?;
    Ok(format!(
        "sizes {sizes:?}; first run trains 0-2, validates 3, tests 4"
    ))
}

fn slice_consistency() -> Outcome {
    let ds = generate_synthetic(&SyntheticConfig {
        n_users: 500,
        n_items: 300,
        n_events: 15_000,
        seed: 13,
        ..SyntheticConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let cfg = EvalConfig {
        seed: 13,
        ..EvalConfig::default()
    };
    let (report, _) = run_evaluation(&ds, &cfg, &ModelChoice::Cooccurrence { neighborhood: 50 })
        .map_err(|e| e.to_string())?;
    let global = report.test_values(test_ids::HR);
    let mut worst: f64 = 0.0;
    for run in &report.runs {
        let slice = run
            .slices
            .iter()
            .find(|s| s.kind == SliceKind::UserCountry)
            .ok_or("no country slice")?;
        let n: usize = slice.groups.values().map(|g| g.members).sum();
        let weighted = slice
            .groups
            .values()
            .map(|g| g.metrics.hr * g.members as f64)
            .sum::<f64>()
            / n as f64;
        let diff = (weighted - global[&run.run_id]).abs();
        worst = worst.max(diff);
        check(
            diff <= 1e-12,
            format!("run {}: {weighted} vs {}", run.run_id, global[&run.run_id]),
        )?;
    }
    Ok(format!("5 runs, max |diff| {worst:.1e}"))
}

fn behavioral_sanity() -> Outcome {
    let ds = common::baseline_dataset();
    let cfg = EvalConfig {
        seed: 42,
        ..EvalConfig::default()
    };
    let (pop, _) = run_evaluation(
        &ds,
        &cfg,
        &ModelChoice::Popularity {
            exclude_seen: false,
        },
    )
    .map_err(|e| e.to_string())?;
    let stability = pop.test_values(test_ids::STABILITY);
    check(
        stability.values().all(|&v| v == 1.0),
        format!("popularity stability {stability:?}"),
    )?;
    let (oracle, _) = run_evaluation(&ds, &cfg, &ModelChoice::Oracle).map_err(|e| e.to_string())?;
    let quality = oracle.test_values(test_ids::ERROR_QUALITY);
    check(
        quality.values().all(|&v| v == 1.0),
        format!("oracle error quality {quality:?}"),
    )?;

    let plan = partition(&ds, 5, 42).map_err(|e| e.to_string())?;
    let mut seen = BTreeSet::new();
    for split in rotation_schedule(5).unwrap() {
        let mat = materialize_split(&ds, &plan, &split).map_err(|e| e.to_string())?;
        let truths = truths_from_map(&mat.test_truth);
        for choice in [
            ModelChoice::Random { seed: 1 },
            ModelChoice::Cooccurrence { neighborhood: 50 },
        ] {
            let mut model = choice.build(&mat).map_err(|e| e.to_string())?;
            let setting = HyperparameterSetting::new();
            let ctx = FitContext {
                run_id: split.run_id,
                seed: 42,
                k: 20,
                train_events: &mat.train_events,
                val_truth: &mat.val_truth,
                setting: &setting,
                budget_remaining: 50,
            };
            train(&mut model, ctx, &mut TrainBudget::new(50)).map_err(|e| e.to_string())?;
            let histories = mat.train_histories();
            let queries: Vec<Query> = truths
                .iter()
                .map(|t| Query {
                    user_id: t.user_id.clone(),
                    history: histories
                        .get(&t.user_id)
                        .map(|h| h.iter().map(|e| e.item_id.clone()).collect())
                        .unwrap_or_default(),
                })
                .collect();
            let preds: Vec<RankedList> =
                recommend_batch(&model, &queries, 20).map_err(|e| e.to_string())?;
            let report =
                error_distance_test(&preds, &truths, ds.items(), 20).map_err(|e| e.to_string())?;
            for &d in report.per_user.values() {
                check([0.0, 0.5, 1.0].contains(&d), format!("distance {d}"))?;
                seen.insert((d * 2.0) as u8);
            }
        }
    }
    Ok(format!(
        "stability 1.0 x5, oracle quality 1.0 x5, distances observed {:?}",
        seen.iter().map(|&d| f64::from(d) / 2.0).collect::<Vec<_>>()
    ))
}

fn budget_enforcement() -> Outcome {
    let mut model = ModelHandle::in_process(PopularityRec::new(false));
    let events = common::small_dataset(1).events().to_vec();
    let truths = Default::default();
    let mut budget = TrainBudget::new(50);
    for i in 1..=51 {
        let setting = HyperparameterSetting::new().with("setting", i);
        let ctx = FitContext {
            run_id: 0,
            seed: 0,
            k: 10,
            train_events: &events,
            val_truth: &truths,
            setting: &setting,
            budget_remaining: budget.remaining(),
        };
        match (i, train(&mut model, ctx, &mut budget)) {
            (1..=50, Ok(_)) => {}
            (51, Err(Error::BudgetExceeded { limit: 50 })) => {
                return Ok("settings 1-50 trained, 51st refused".into())
            }
            (i, other) => return Err(format!("setting {i}: {other:?}")),
        }
    }
    Err("51st setting was accepted".into())
}

fn baseline_ordering() -> Outcome {
    let ds = generate_synthetic(&SyntheticConfig {
        n_users: 1000,
        n_items: 500,
        n_events: 50_000,
        zipf_exponent: 1.1,
        seed: 42,
        ..SyntheticConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let cfg = EvalConfig {
        seed: 42,
        parallel_runs: true,
        ..EvalConfig::default()
    };
    let (pop, _) = run_evaluation(
        &ds,
        &cfg,
        &ModelChoice::Popularity {
            exclude_seen: false,
        },
    )
    .map_err(|e| e.to_string())?;
    let (random, _) =
        run_evaluation(&ds, &cfg, &ModelChoice::Random { seed: 42 }).map_err(|e| e.to_string())?;
    check(
        pop.final_score > random.final_score,
        format!(
            "popularity {} vs random {}",
            pop.final_score, random.final_score
        ),
    )?;
    let bucket_mean = |label: &str| {
        let values: Vec<f64> = pop
            .runs
            .iter()
            .filter_map(|r| {
                r.slices
                    .iter()
                    .find(|s| s.kind == SliceKind::ItemPopularity)
            })
            .filter_map(|s| s.group_hr(label))
            .collect();
        values.iter().sum::<f64>() / values.len() as f64
    };
    let (top, bottom) = (bucket_mean("pop_3"), bucket_mean("pop_0"));
    check(
        top >= bottom,
        format!("top bucket {top} < bottom bucket {bottom}"),
    )?;
    Ok(format!(
        "final popularity {:.4} > random {:.4}; popularity HR top bucket {top:.4} >= bottom {bottom:.4}",
        pop.final_score, random.final_score
    ))
}

fn bootstrap_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let trials = 200;
    let mut covered = 0;
    for trial in 0..trials {
        // Exponential with rate 2: true mean 0.5, skewed.
        let sample: Vec<f64> = (0..30)
            .map(|_| -(1.0 - rng.gen::<f64>()).ln() / 2.0)
            .collect();
        let (lo, hi) =
            bootstrap_mean_ci(&sample, DEFAULT_N_BOOT, 0.05, trial).map_err(|e| e.to_string())?;
        if lo <= 0.5 && 0.5 <= hi {
            covered += 1;
        }
    }
    let rate = covered as f64 / trials as f64;
    check(rate >= 0.88, format!("coverage {rate:.3}"))?;
    let point =
        bootstrap_mean_ci(&[0.3; 30], DEFAULT_N_BOOT, 0.05, 0).map_err(|e| e.to_string())?;
    check(point == (0.3, 0.3), format!("zero-variance CI {point:?}"))?;
    Ok(format!(
        "coverage {covered}/{trials} = {rate:.3}; zero-variance CI {point:?}"
    ))
}

fn verification_semantics() -> Outcome {
    let ds = common::small_dataset(3);
    let cfg = EvalConfig {
        k: 10,
        seed: 3,
        ..EvalConfig::default()
    };
    let (report, _) = run_evaluation(&ds, &cfg, &ModelChoice::Cooccurrence { neighborhood: 20 })
        .map_err(|e| e.to_string())?;
    let opts = VerifyOptions::default();
    let same = verify(&report, &report, &opts).map_err(|e| e.to_string())?;
    check(same.overall_pass, "self-verification failed")?;
    let mut shifted = report.clone();
    for t in &mut shifted.results {
        t.value += 0.5;
    }
    let res = verify(&report, &shifted, &opts).map_err(|e| e.to_string())?;
    check(!res.overall_pass, "shifted copy passed")?;
    let mut other = report.clone();
    other.k = 20;
    match verify(&report, &other, &opts) {
        Err(Error::IncompatibleReports(_)) => {}
        other => return Err(format!("mismatched k gave {other:?}")),
    }
    Ok("self passes, +0.5 shift fails, k mismatch incompatible".into())
}

fn end_to_end_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_recbench");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let status = Command::new(bin)
        .args([
            "gen",
            "--users",
            "1000",
            "--items",
            "500",
            "--events",
            "50000",
            "--seed",
            "42",
            "--out-dir",
        ])
        .arg(&data)
        .output()
        .map_err(|e| e.to_string())?;
    check(
        status.status.success(),
        String::from_utf8_lossy(&status.stderr).to_string(),
    )?;
    let mut reports = Vec::new();
    let mut slowest = Duration::ZERO;
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        let started = Instant::now();
        let run = Command::new(bin)
            .args(["eval", "--model", "cooc", "--seed", "42", "--data-dir"])
            .arg(&data)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        slowest = slowest.max(started.elapsed());
        check(
            run.status.success(),
            String::from_utf8_lossy(&run.stderr).to_string(),
        )?;
        reports.push(RunReport::read(&out).map_err(|e| e.to_string())?);
    }
    let a = reports[0].content_json().map_err(|e| e.to_string())?;
    let b = reports[1].content_json().map_err(|e| e.to_string())?;
    check(a == b, "reports differ outside meta")?;
    check(
        slowest < Duration::from_secs(300),
        format!("full loop took {slowest:?}"),
    )?;
    Ok(format!(
        "identical content ({} bytes); slowest cooc loop {slowest:.2?}",
        a.len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("metric oracle equivalence", metric_oracle),
        ("fold protocol", fold_protocol),
        ("slice consistency", slice_consistency),
        ("behavioral sanity", behavioral_sanity),
        ("budget enforcement", budget_enforcement),
        ("comparative baseline ordering", baseline_ordering),
        ("bootstrap calibration", bootstrap_calibration),
        ("verification semantics", verification_semantics),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = 0;
    for (name, criterion) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    println!(
        "{} of {} acceptance criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
