mod common;

use std::path::{Path, PathBuf};
use std::time::Duration;

use recbench::datamodel::{InteractionEvent, UserId};
use recbench::error::Error;
use recbench::external::{
    run_external, write_request, ExternalCommand, RequestManifest, PHASE_FIT_PREDICT,
};
use recbench::folds::Truths;
use recbench::harness::{run_evaluation, test_ids, EvalConfig, ModelChoice};
use recbench::model::{
    recommend, train, CooccurrenceRec, FitContext, HyperparameterSetting, ModelHandle,
    PopularityRec, RandomRec, TrainBudget,
};

fn fit(model: &mut ModelHandle, events: &[InteractionEvent]) {
    let truths = Truths::new();
    let setting = HyperparameterSetting::new();
    let ctx = FitContext {
        run_id: 0,
        seed: 1,
        k: 5,
        train_events: events,
        val_truth: &truths,
        setting: &setting,
        budget_remaining: 50,
    };
    train(model, ctx, &mut TrainBudget::new(50)).unwrap();
}

#[test]
fn fifty_first_distinct_setting_is_refused() {
    let mut model = ModelHandle::in_process(PopularityRec::new(false));
    let events = vec![InteractionEvent::new("u", "a", 0)];
    let truths = Truths::new();
    let mut budget = TrainBudget::new(50);
    let settings: Vec<HyperparameterSetting> = (0..51)
        .map(|i| HyperparameterSetting::new().with("factors", i))
        .collect();
    for (i, setting) in settings.iter().enumerate() {
        let ctx = FitContext {
            run_id: 0,
            seed: 1,
            k: 5,
            train_events: &events,
            val_truth: &truths,
            setting,
            budget_remaining: budget.remaining(),
        };
        let outcome = train(&mut model, ctx, &mut budget);
        if i < 50 {
            outcome.unwrap();
        } else {
            assert!(matches!(outcome, Err(Error::BudgetExceeded { limit: 50 })));
        }
        if i == 49 {
            budget.admit(&settings[2]).unwrap();
        }
    }
    assert_eq!(budget.used(), 50);
}

#[test]
fn setting_hash_ignores_insertion_order() {
    let a = HyperparameterSetting::new()
        .with("lr", 0.1)
        .with("factors", 32);
    let b = HyperparameterSetting::new()
        .with("factors", 32)
        .with("lr", 0.1);
    assert_eq!(a.canonical_hash(), b.canonical_hash());
}

#[test]
fn baselines_are_deterministic_and_duplicate_free() {
    let ds = common::small_dataset(8);
    let users: Vec<UserId> = ds.users().keys().take(10).cloned().collect();
    for make in [
        || ModelHandle::in_process(RandomRec::new(3)),
        || ModelHandle::in_process(PopularityRec::new(true)),
        || ModelHandle::in_process(CooccurrenceRec::new(10)),
    ] {
        let mut a = make();
        let mut b = make();
        fit(&mut a, ds.events());
        fit(&mut b, ds.events());
        for u in &users {
            let history: Vec<_> = ds
                .events()
                .iter()
                .filter(|e| &e.user_id == u)
                .map(|e| e.item_id.clone())
                .collect();
            let x = recommend(&a, u, &history, 7).unwrap();
            let y = recommend(&b, u, &history, 7).unwrap();
            assert_eq!(x, y);
            assert!(x.items.len() <= 7 && !x.has_duplicates());
        }
    }
}

#[test]
fn cooccurrence_ranks_partner_first() {
    let events = vec![
        InteractionEvent::new("u1", "a", 0),
        InteractionEvent::new("u1", "b", 1),
        InteractionEvent::new("u2", "a", 0),
        InteractionEvent::new("u2", "b", 1),
        InteractionEvent::new("u3", "c", 0),
        InteractionEvent::new("u3", "c", 1),
        InteractionEvent::new("u3", "c", 2),
    ];
    let mut model = ModelHandle::in_process(CooccurrenceRec::new(10));
    fit(&mut model, &events);
    let list = recommend(&model, &"q".into(), &["a".into()], 2).unwrap();
    assert_eq!(list.items[0].as_str(), "b");
    assert!(!list.items.iter().any(|i| i.as_str() == "a"));
}

fn script(dir: &Path, name: &str, body: &str) -> ExternalCommand {
    let path: PathBuf = dir.join(name);
    std::fs::write(&path, body).unwrap();
    ExternalCommand {
        args: vec![path.display().to_string()],
        ..ExternalCommand::new("sh")
    }
}

fn request(dir: &Path, users: &[&str]) -> Vec<UserId> {
    let events: Vec<InteractionEvent> = users
        .iter()
        .map(|u| InteractionEvent::new(*u, "a", 0))
        .collect();
    let users: Vec<UserId> = users.iter().map(|u| UserId::from(*u)).collect();
    let manifest = RequestManifest {
        k: 3,
        run_id: 0,
        seed: 0,
        phase: PHASE_FIT_PREDICT.into(),
        budget_remaining: 49,
    };
    write_request(dir, &manifest, &events, &users, &Truths::new()).unwrap();
    users
}

const ECHO: &str = r#"
dir="$1"
{
  printf 'user_id\trank\titem_id\n'
  tail -n +2 "$dir/test_users.tsv" | while read -r u; do
    printf '%s\t1\tx\n%s\t2\ty\n' "$u" "$u"
  done
} > "$dir/predictions.tsv"
"#;

#[test]
fn fixed_list_adapter_round_trips() {
    let scripts = tempfile::tempdir().unwrap();
    let req = tempfile::tempdir().unwrap();
    let cmd = script(scripts.path(), "echo.sh", ECHO);
    let users = request(req.path(), &["u1", "u2"]);
    let answers = run_external(&cmd, req.path(), &users, 3).unwrap();
    assert_eq!(answers.len(), 2);
    for list in answers.values() {
        let items: Vec<&str> = list.items.iter().map(|i| i.as_str()).collect();
        assert_eq!(items, ["x", "y"]);
    }
}

#[test]
fn missing_user_is_named() {
    let scripts = tempfile::tempdir().unwrap();
    let req = tempfile::tempdir().unwrap();
    let cmd = script(
        scripts.path(),
        "partial.sh",
        "printf 'user_id\\trank\\titem_id\\nu1\\t1\\tx\\n' > \"$1/predictions.tsv\"\n",
    );
    let users = request(req.path(), &["u1", "u2"]);
    match run_external(&cmd, req.path(), &users, 3) {
        Err(Error::MalformedPredictions(msg)) => assert!(msg.contains("u2"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn slow_model_times_out_with_diagnostics() {
    let scripts = tempfile::tempdir().unwrap();
    let req = tempfile::tempdir().unwrap();
    let cmd = script(
        scripts.path(),
        "slow.sh",
        "echo warming up\necho stuck >&2\nexec sleep 30\n",
    )
    .with_timeout(Duration::from_millis(500));
    let users = request(req.path(), &["u1"]);
    let started = std::time::Instant::now();
    match run_external(&cmd, req.path(), &users, 3) {
        Err(Error::Timeout { diagnostics, .. }) => {
            assert!(diagnostics.contains("stuck"), "{diagnostics}");
            assert!(diagnostics.contains("warming up"), "{diagnostics}");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(started.elapsed() < Duration::from_secs(10));
}

#[test]
fn failing_model_reports_status() {
    let scripts = tempfile::tempdir().unwrap();
    let req = tempfile::tempdir().unwrap();
    let cmd = script(scripts.path(), "fail.sh", "echo 'bad input' >&2\nexit 3\n");
    let users = request(req.path(), &["u1"]);
    match run_external(&cmd, req.path(), &users, 3) {
        Err(Error::ExternalModelFailure { diagnostics, .. }) => {
            assert!(diagnostics.contains("bad input"))
        }
        other => panic!("unexpected {other:?}"),
    }
}

/// Popularity by total playcount, ties by item id, same list for everyone.
const POPULARITY: &str = r#"
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

#[test]
fn external_popularity_matches_in_process_baseline() {
    let ds = common::small_dataset(12);
    let scripts = tempfile::tempdir().unwrap();
    let cmd = script(scripts.path(), "popularity.sh", POPULARITY);
    let cfg = EvalConfig {
        k: 10,
        seed: 12,
        perturbation_sample: 5,
        ..EvalConfig::default()
    };
    let (ext, _) = run_evaluation(&ds, &cfg, &ModelChoice::External(cmd)).unwrap();
    let (native, _) = run_evaluation(
        &ds,
        &cfg,
        &ModelChoice::Popularity {
            exclude_seen: false,
        },
    )
    .unwrap();
    for test in [
        test_ids::HR,
        test_ids::MRR,
        test_ids::NDCG,
        test_ids::MAP,
        test_ids::COVERAGE,
        test_ids::ERROR_QUALITY,
    ] {
        assert_eq!(ext.test_values(test), native.test_values(test), "{test}");
    }
}
