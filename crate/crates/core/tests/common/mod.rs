#![allow(dead_code)]

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use recbench::datamodel::{generate_synthetic, Dataset, SyntheticConfig};
use recbench::metrics::{GroundTruth, RankedList};

pub fn small_dataset(seed: u64) -> Dataset {
    generate_synthetic(&SyntheticConfig {
        n_users: 60,
        n_items: 80,
        n_events: 1200,
        n_artists: 20,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

pub fn baseline_dataset() -> Dataset {
    generate_synthetic(&SyntheticConfig::default()).unwrap()
}

/// One user's instance in plain strings: prediction list (None = no list
/// submitted) and relevant items.
pub struct Instance {
    pub users: Vec<(String, Option<Vec<String>>, Vec<String>)>,
    pub k: usize,
}

impl Instance {
    pub fn random(rng: &mut impl Rng) -> Self {
        let n_users = rng.gen_range(1..=50);
        let n_items = rng.gen_range(1..=100);
        let k = rng.gen_range(1..=10);
        let catalog: Vec<String> = (0..n_items).map(|i| format!("i{i}")).collect();
        let users = (0..n_users)
            .map(|u| {
                let n_truth = rng.gen_range(1..=n_items.min(15));
                let truth: Vec<String> = catalog.choose_multiple(rng, n_truth).cloned().collect();
                let preds = if rng.gen_bool(0.9) {
                    let n_pred = rng.gen_range(0..=n_items.min(k + 3));
                    Some(catalog.choose_multiple(rng, n_pred).cloned().collect())
                } else {
                    None
                };
                (format!("u{u}"), preds, truth)
            })
            .collect();
        Self { users, k }
    }

    pub fn preds(&self) -> Vec<RankedList> {
        self.users
            .iter()
            .filter_map(|(u, p, _)| {
                p.as_ref()
                    .map(|p| RankedList::new(u.as_str(), p.iter().map(|i| i.as_str().into())))
            })
            .collect()
    }

    pub fn truths(&self) -> Vec<GroundTruth> {
        self.users
            .iter()
            .map(|(u, _, t)| {
                GroundTruth::new(u.as_str(), t.iter().map(|i| i.as_str().into())).unwrap()
            })
            .collect()
    }
}

/// Straightforward per-user reference: [hr, mrr, ndcg, map] averaged over
/// users, a missing list scoring zero.
pub fn brute_force(inst: &Instance) -> [f64; 4] {
    let k = inst.k;
    let mut total = [0.0; 4];
    for (_, preds, truth) in &inst.users {
        let Some(preds) = preds else { continue };
        let truth: HashSet<&String> = truth.iter().collect();
        let mut hr = 0.0;
        let mut mrr = 0.0;
        let mut dcg = 0.0;
        let mut ap = 0.0;
        let mut hits = 0;
        for (i, item) in preds.iter().take(k).enumerate() {
            let rank = (i + 1) as f64;
            if truth.contains(item) {
                hits += 1;
                if hr == 0.0 {
                    hr = 1.0;
                    mrr = 1.0 / rank;
                }
                dcg += 1.0 / (rank + 1.0).log2();
                ap += hits as f64 / rank;
            }
        }
        let ideal = truth.len().min(k);
        let mut idcg = 0.0;
        for i in 1..=ideal {
            idcg += 1.0 / ((i + 1) as f64).log2();
        }
        total[0] += hr;
        total[1] += mrr;
        total[2] += dcg / idcg;
        total[3] += ap / ideal as f64;
    }
    let n = inst.users.len() as f64;
    total.map(|t| t / n)
}
