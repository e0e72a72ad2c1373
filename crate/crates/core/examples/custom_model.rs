//! Plugging an in-process model into the harness through the
//! `Recommender` trait and a closure factory.

use std::collections::HashMap;

use recbench::datamodel::{generate_synthetic, ItemId, SyntheticConfig, UserId};
use recbench::harness::{run_evaluation, EvalConfig};
use recbench::metrics::RankedList;
use recbench::model::{FitContext, ModelHandle, Recommender};

/// Recommends the most recently trending items: training plays weighted by
/// timestamp.
#[derive(Default)]
struct Recency {
    ranking: Vec<ItemId>,
}

impl Recommender for Recency {
    fn name(&self) -> &str {
        "recency"
    }

    fn fit(&mut self, ctx: &FitContext<'_>) -> recbench::error::Result<()> {
        let mut score: HashMap<&ItemId, f64> = HashMap::new();
        for e in ctx.train_events {
            *score.entry(&e.item_id).or_default() += (1 + e.timestamp) as f64;
        }
        let mut items: Vec<(&ItemId, f64)> = score.into_iter().collect();
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        self.ranking = items.into_iter().map(|(i, _)| i.clone()).collect();
        Ok(())
    }

    fn recommend(
        &self,
        user: &UserId,
        history: &[ItemId],
        k: usize,
    ) -> recbench::error::Result<RankedList> {
        let fresh = self
            .ranking
            .iter()
            .filter(|i| !history.contains(i))
            .take(k)
            .cloned();
        Ok(RankedList::new(user.clone(), fresh))
    }

    fn concurrent_query_safe(&self) -> bool {
        true
    }
}

fn main() -> recbench::error::Result<()> {
    let dataset = generate_synthetic(&SyntheticConfig {
        n_users: 300,
        n_items: 200,
        n_events: 12_000,
        ..SyntheticConfig::default()
    })?;
    let factory =
        |_: &recbench::folds::SplitMaterialization| Ok(ModelHandle::in_process(Recency::default()));
    let cfg = EvalConfig {
        seed: 5,
        parallel_runs: true,
        ..EvalConfig::default()
    };
    let (report, _) = run_evaluation(&dataset, &cfg, &factory)?;
    println!("recency final score {:.4}", report.final_score);
    Ok(())
}
