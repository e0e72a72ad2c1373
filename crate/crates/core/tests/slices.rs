mod common;

use recbench::datamodel::{generate_synthetic, SyntheticConfig};
use recbench::folds::{materialize_split, partition, rotation_schedule};
use recbench::metrics::{evaluate_standard, truths_from_map, GroundTruth, RankedList};
use recbench::model::{
    recommend_batch, train, FitContext, HyperparameterSetting, ModelHandle, PopularityRec, Query,
    TrainBudget,
};
use recbench::slices::{slice_evaluate, SliceContext, SliceKind, SliceSpec};

struct Run {
    ds: recbench::datamodel::Dataset,
    mat: recbench::folds::SplitMaterialization,
    preds: Vec<RankedList>,
    truths: Vec<GroundTruth>,
}

fn popularity_run(n_users: usize) -> Run {
    let ds = generate_synthetic(&SyntheticConfig {
        n_users,
        n_items: 300,
        n_events: n_users * 30,
        seed: 9,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let plan = partition(&ds, 5, 9).unwrap();
    let split = &rotation_schedule(5).unwrap()[0];
    let mat = materialize_split(&ds, &plan, split).unwrap();
    let mut model = ModelHandle::in_process(PopularityRec::new(true));
    let setting = HyperparameterSetting::new();
    let mut budget = TrainBudget::new(50);
    let ctx = FitContext {
        run_id: 0,
        seed: 9,
        k: 10,
        train_events: &mat.train_events,
        val_truth: &mat.val_truth,
        setting: &setting,
        budget_remaining: 50,
    };
    train(&mut model, ctx, &mut budget).unwrap();
    let histories = mat.train_histories();
    let truths = truths_from_map(&mat.test_truth);
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
    let preds = recommend_batch(&model, &queries, 10).unwrap();
    Run {
        ds,
        mat,
        preds,
        truths,
    }
}

#[test]
fn weighted_group_hit_rate_equals_global() {
    let run = popularity_run(500);
    let global = evaluate_standard(&run.preds, &run.truths, 10, run.ds.items().len())
        .unwrap()
        .hr_at_k;
    let ctx = SliceContext {
        dataset: &run.ds,
        train_events: &run.mat.train_events,
        cold_start_users: &run.mat.cold_start_users,
    };
    for kind in [
        SliceKind::UserCountry,
        SliceKind::UserGender,
        SliceKind::UserActivity,
        SliceKind::ColdStart,
    ] {
        let report =
            slice_evaluate(&run.preds, &run.truths, &ctx, &SliceSpec::new(kind), 10).unwrap();
        let n: usize = report.groups.values().map(|g| g.members).sum();
        assert_eq!(n, run.truths.len(), "{kind:?}");
        let weighted: f64 = report
            .groups
            .values()
            .map(|g| g.metrics.hr * g.members as f64)
            .sum::<f64>()
            / n as f64;
        assert!(
            (weighted - global).abs() < 1e-12,
            "{kind:?}: {weighted} vs {global}"
        );
    }
}

#[test]
fn country_groups_match_filter_then_evaluate() {
    let run = popularity_run(120);
    let ctx = SliceContext {
        dataset: &run.ds,
        train_events: &run.mat.train_events,
        cold_start_users: &run.mat.cold_start_users,
    };
    let report = slice_evaluate(
        &run.preds,
        &run.truths,
        &ctx,
        &SliceSpec::new(SliceKind::UserCountry),
        10,
    )
    .unwrap();
    for (country, stats) in &report.groups {
        let in_group = |u: &recbench::datamodel::UserId| {
            run.ds.user(u).and_then(|r| r.country.as_deref()) == Some(country.as_str())
        };
        let truths: Vec<GroundTruth> = run
            .truths
            .iter()
            .filter(|t| in_group(&t.user_id))
            .cloned()
            .collect();
        let preds: Vec<RankedList> = run
            .preds
            .iter()
            .filter(|p| in_group(&p.user_id))
            .cloned()
            .collect();
        let r = evaluate_standard(&preds, &truths, 10, run.ds.items().len()).unwrap();
        assert_eq!(stats.members, truths.len());
        assert!((stats.metrics.hr - r.hr_at_k).abs() < 1e-12);
        assert!((stats.metrics.mrr - r.mrr_at_k).abs() < 1e-12);
        assert!((stats.metrics.ndcg - r.ndcg_at_k).abs() < 1e-12);
        assert!((stats.metrics.map - r.map_at_k).abs() < 1e-12);
    }
    let worst = report
        .groups
        .values()
        .map(|g| g.metrics.hr)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(report.worst_group_hr, worst);
}

#[test]
fn popularity_head_bucket_beats_tail_for_popularity_model() {
    let run = popularity_run(500);
    let ctx = SliceContext {
        dataset: &run.ds,
        train_events: &run.mat.train_events,
        cold_start_users: &run.mat.cold_start_users,
    };
    let report = slice_evaluate(
        &run.preds,
        &run.truths,
        &ctx,
        &SliceSpec::new(SliceKind::ItemPopularity),
        10,
    )
    .unwrap();
    let top = report.group_hr("pop_3").unwrap();
    let bottom = report.group_hr("pop_0").unwrap();
    assert!(top >= bottom, "{top} < {bottom}");
}
