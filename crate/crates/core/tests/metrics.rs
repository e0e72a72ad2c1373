mod common;

use common::{brute_force, Instance};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recbench::metrics::{coverage, evaluate_standard, per_user_scores, GroundTruth, RankedList};

fn list(user: &str, items: &[&str]) -> RankedList {
    RankedList::new(user, items.iter().map(|&i| i.into()))
}

fn truth(user: &str, items: &[&str]) -> GroundTruth {
    GroundTruth::new(user, items.iter().map(|&i| i.into())).unwrap()
}

#[test]
fn random_instance_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let inst = Instance::random(&mut rng);
    let report = evaluate_standard(&inst.preds(), &inst.truths(), inst.k, 100).unwrap();
    let expected = brute_force(&inst);
    let got = [
        report.hr_at_k,
        report.mrr_at_k,
        report.ndcg_at_k,
        report.map_at_k,
    ];
    for (g, e) in got.iter().zip(expected) {
        assert!((g - e).abs() < 1e-12, "{g} vs {e}");
    }
}

#[test]
fn two_users_mean_hit_rate() {
    let preds = [list("u1", &["a"]), list("u2", &["b"])];
    let truths = [truth("u1", &["a"]), truth("u2", &["c"])];
    assert_eq!(
        evaluate_standard(&preds, &truths, 1, 3).unwrap().hr_at_k,
        0.5
    );
}

#[test]
fn oracle_predictions_score_one() {
    let truths = [truth("u1", &["a", "b"]), truth("u2", &["c"])];
    let preds = [list("u1", &["b", "a"]), list("u2", &["c", "x"])];
    let r = evaluate_standard(&preds, &truths, 5, 4).unwrap();
    assert_eq!(
        (r.hr_at_k, r.mrr_at_k, r.ndcg_at_k, r.map_at_k),
        (1.0, 1.0, 1.0, 1.0)
    );
}

#[test]
fn coverage_examples() {
    let lists = [list("u1", &["i1", "i3"]), list("u2", &["i1"])];
    assert_eq!(coverage(&lists, 4).unwrap(), 0.5);
    assert_eq!(coverage(&[], 4).unwrap(), 0.0);
    let all = [list("u1", &["i1", "i2"]), list("u2", &["i3", "i4"])];
    assert_eq!(coverage(&all, 4).unwrap(), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn standard_metrics_match_reference(seed in any::<u64>()) {
        let inst = Instance::random(&mut ChaCha8Rng::seed_from_u64(seed));
        let r = evaluate_standard(&inst.preds(), &inst.truths(), inst.k, 100).unwrap();
        let e = brute_force(&inst);
        prop_assert!((r.hr_at_k - e[0]).abs() < 1e-9);
        prop_assert!((r.mrr_at_k - e[1]).abs() < 1e-9);
        prop_assert!((r.ndcg_at_k - e[2]).abs() < 1e-9);
        prop_assert!((r.map_at_k - e[3]).abs() < 1e-9);
    }

    #[test]
    fn per_user_bounds(seed in any::<u64>()) {
        let inst = Instance::random(&mut ChaCha8Rng::seed_from_u64(seed));
        let scores = per_user_scores(&inst.preds(), &inst.truths(), inst.k).unwrap();
        for s in scores.values() {
            for v in [s.hr, s.mrr, s.ndcg, s.map] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
            prop_assert!(s.hr >= s.mrr);
            if s.hr == 0.0 {
                prop_assert_eq!((s.mrr, s.ndcg, s.map), (0.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn ideal_ordering_scores_one(n_truth in 1usize..20, k in 1usize..10) {
        let items: Vec<String> = (0..n_truth).map(|i| format!("i{i}")).collect();
        let t = GroundTruth::new("u", items.iter().map(|i| i.as_str().into())).unwrap();
        let p = RankedList::new("u", items.iter().map(|i| i.as_str().into()));
        let r = evaluate_standard(&[p], &[t], k, n_truth).unwrap();
        prop_assert_eq!(r.hr_at_k, 1.0);
        prop_assert_eq!(r.mrr_at_k, 1.0);
        prop_assert!((r.ndcg_at_k - 1.0).abs() < 1e-12);
        prop_assert!((r.map_at_k - 1.0).abs() < 1e-12);
    }
}
