//! Black-box model contract, hyperparameter budget accounting, and the
//! reference baselines.
//!
//! The harness never looks inside a model: it fits it on a run's training
//! events and asks for top-K lists given a user id and that user's history.
//! In-process models implement [`Recommender`] directly; processes outside
//! the harness are driven through the file exchange in [`crate::external`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::{InteractionEvent, ItemId, UserId};
use crate::error::{Error, Result};
use crate::folds::Truths;
use crate::metrics::RankedList;
use crate::seeding::derive_seed;
use crate::slices::item_playcounts;

pub const DEFAULT_BUDGET: usize = 50;

/// Opaque key/value hyperparameters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperparameterSetting(BTreeMap<String, String>);

impl HyperparameterSetting {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.0.insert(key.into(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// SHA-256 of the sorted `key=value` lines; independent of insertion order.
    pub fn canonical_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.0 {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for HyperparameterSetting {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Self(
            iter.into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }
}

/// Distinct settings trained within one run. A fresh budget is created for
/// every run of the rotation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainBudget {
    limit: usize,
    seen_hashes: BTreeSet<String>,
}

impl TrainBudget {
    pub fn new(limit: usize) -> Self {
        Self {
            limit,
            seen_hashes: BTreeSet::new(),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn used(&self) -> usize {
        self.seen_hashes.len()
    }

    pub fn remaining(&self) -> usize {
        self.limit - self.seen_hashes.len()
    }

    /// Records `setting`. Re-training an already seen setting is free.
    pub fn admit(&mut self, setting: &HyperparameterSetting) -> Result<()> {
        let hash = setting.canonical_hash();
        if self.seen_hashes.contains(&hash) {
            return Ok(());
        }
        if self.seen_hashes.len() >= self.limit {
            return Err(Error::BudgetExceeded { limit: self.limit });
        }
        self.seen_hashes.insert(hash);
        Ok(())
    }
}

impl Default for TrainBudget {
    fn default() -> Self {
        Self::new(DEFAULT_BUDGET)
    }
}

/// Everything a model may see while fitting one run.
#[derive(Clone, Copy, Debug)]
pub struct FitContext<'a> {
    pub run_id: usize,
    pub seed: u64,
    pub k: usize,
    pub train_events: &'a [InteractionEvent],
    /// Validation truth, available for tuning; never scored.
    pub val_truth: &'a Truths,
    pub setting: &'a HyperparameterSetting,
    pub budget_remaining: usize,
}

/// One top-K request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub user_id: UserId,
    pub history: Vec<ItemId>,
}

pub trait Recommender: Send + Sync {
    fn name(&self) -> &str;

    fn fit(&mut self, ctx: &FitContext<'_>) -> Result<()>;

    /// At most `k` distinct items, best first. `history` may be empty.
    fn recommend(&self, user: &UserId, history: &[ItemId], k: usize) -> Result<RankedList>;

    /// Whether `recommend` may be called from several threads at once.
    fn concurrent_query_safe(&self) -> bool {
        false
    }

    fn recommend_batch(&self, queries: &[Query], k: usize) -> Result<Vec<RankedList>> {
        let one = |q: &Query| self.recommend(&q.user_id, &q.history, k);
        if self.concurrent_query_safe() {
            queries.par_iter().map(one).collect()
        } else {
            queries.iter().map(one).collect()
        }
    }
}

/// How a model is reached.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Binding {
    InProcess,
    External {
        command: Vec<String>,
        working_dir: Option<std::path::PathBuf>,
    },
}

/// A named model plus its binding.
pub struct ModelHandle {
    pub name: String,
    pub binding: Binding,
    model: Box<dyn Recommender>,
}

impl fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle")
            .field("name", &self.name)
            .field("binding", &self.binding)
            .field("concurrent_query_safe", &self.concurrent_query_safe())
            .finish()
    }
}

impl ModelHandle {
    pub fn in_process(model: impl Recommender + 'static) -> Self {
        Self {
            name: model.name().to_owned(),
            binding: Binding::InProcess,
            model: Box::new(model),
        }
    }

    pub fn with_binding(model: Box<dyn Recommender>, binding: Binding) -> Self {
        Self {
            name: model.name().to_owned(),
            binding,
            model,
        }
    }

    pub fn concurrent_query_safe(&self) -> bool {
        self.model.concurrent_query_safe()
    }

    pub fn model(&self) -> &dyn Recommender {
        self.model.as_ref()
    }

    pub fn model_mut(&mut self) -> &mut dyn Recommender {
        self.model.as_mut()
    }
}

/// Proof that a model was fitted under a budgeted setting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainedToken {
    pub run_id: usize,
    pub setting_hash: String,
}

/// Charges `setting` against `budget`, then fits the model.
pub fn train(
    model: &mut ModelHandle,
    ctx: FitContext<'_>,
    budget: &mut TrainBudget,
) -> Result<TrainedToken> {
    budget.admit(ctx.setting)?;
    let ctx = FitContext {
        budget_remaining: budget.remaining(),
        ..ctx
    };
    model.model.fit(&ctx)?;
    Ok(TrainedToken {
        run_id: ctx.run_id,
        setting_hash: ctx.setting.canonical_hash(),
    })
}

/// Queries a fitted model and checks the answer honours the contract.
pub fn recommend(
    model: &ModelHandle,
    user: &UserId,
    history: &[ItemId],
    k: usize,
) -> Result<RankedList> {
    let list = model.model.recommend(user, history, k)?;
    check_answer(&list, user, k)?;
    Ok(list)
}

pub fn recommend_batch(
    model: &ModelHandle,
    queries: &[Query],
    k: usize,
) -> Result<Vec<RankedList>> {
    let lists = model.model.recommend_batch(queries, k)?;
    if lists.len() != queries.len() {
        return Err(Error::ModelQueryFailure {
            user: String::new(),
            reason: format!("{} answers for {} queries", lists.len(), queries.len()),
        });
    }
    for (list, q) in lists.iter().zip(queries) {
        check_answer(list, &q.user_id, k)?;
    }
    Ok(lists)
}

fn check_answer(list: &RankedList, user: &UserId, k: usize) -> Result<()> {
    let fail = |reason: String| {
        Err(Error::ModelQueryFailure {
            user: user.0.clone(),
            reason,
        })
    };
    if &list.user_id != user {
        return fail(format!("answer addressed to {:?}", list.user_id.0));
    }
    if list.items.len() > k {
        return fail(format!("{} items returned for k={k}", list.items.len()));
    }
    if list.has_duplicates() {
        return fail("duplicate items in list".into());
    }
    Ok(())
}

/// Uniformly random items from the training catalog, seeded per user so
/// repeated queries agree.
#[derive(Clone, Debug)]
pub struct RandomRec {
    seed: u64,
    items: Vec<ItemId>,
}

impl RandomRec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            items: Vec::new(),
        }
    }
}

impl Recommender for RandomRec {
    fn name(&self) -> &str {
        "random"
    }

    fn fit(&mut self, ctx: &FitContext<'_>) -> Result<()> {
        if ctx.train_events.is_empty() {
            return Err(Error::EmptyTraining);
        }
        self.items = item_playcounts(ctx.train_events).into_keys().collect();
        Ok(())
    }

    fn recommend(&self, user: &UserId, _history: &[ItemId], k: usize) -> Result<RankedList> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, user.as_str()));
        let items = self.items.choose_multiple(&mut rng, k).cloned();
        Ok(RankedList::new(user.clone(), items))
    }

    fn concurrent_query_safe(&self) -> bool {
        true
    }
}

/// Items ordered by total training playcount (descending, ties by item id).
pub fn popularity_ranking(train_events: &[InteractionEvent]) -> Vec<ItemId> {
    let mut ranked: Vec<(u64, ItemId)> = item_playcounts(train_events)
        .into_iter()
        .map(|(item, c)| (c, item))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    ranked.into_iter().map(|(_, item)| item).collect()
}

/// Most-played items, optionally skipping what the user already played.
#[derive(Clone, Debug, Default)]
pub struct PopularityRec {
    exclude_seen: bool,
    ranking: Vec<ItemId>,
}

impl PopularityRec {
    pub fn new(exclude_seen: bool) -> Self {
        Self {
            exclude_seen,
            ranking: Vec::new(),
        }
    }

    pub fn ranking(&self) -> &[ItemId] {
        &self.ranking
    }
}

fn top_excluding(ranking: &[ItemId], excluded: &HashSet<&ItemId>, k: usize) -> Vec<ItemId> {
    ranking
        .iter()
        .filter(|i| !excluded.contains(i))
        .take(k)
        .cloned()
        .collect()
}

impl Recommender for PopularityRec {
    fn name(&self) -> &str {
        "popularity"
    }

    fn fit(&mut self, ctx: &FitContext<'_>) -> Result<()> {
        if ctx.train_events.is_empty() {
            return Err(Error::EmptyTraining);
        }
        self.ranking = popularity_ranking(ctx.train_events);
        Ok(())
    }

    fn recommend(&self, user: &UserId, history: &[ItemId], k: usize) -> Result<RankedList> {
        let excluded: HashSet<&ItemId> = if self.exclude_seen {
            history.iter().collect()
        } else {
            HashSet::new()
        };
        Ok(RankedList::new(
            user.clone(),
            top_excluding(&self.ranking, &excluded, k),
        ))
    }

    fn concurrent_query_safe(&self) -> bool {
        true
    }
}

pub const DEFAULT_NEIGHBORHOOD: usize = 100;

/// Item-to-item co-occurrence kNN.
///
/// Two items co-occur once for every user whose training history holds
/// both. Each item keeps its `neighborhood` strongest neighbours; a
/// candidate's score is the sum of its co-occurrence with every distinct
/// history item. History items are never recommended, and lists are
/// topped up from the popularity ranking.
#[derive(Clone, Debug)]
pub struct CooccurrenceRec {
    neighborhood: usize,
    neighbors: HashMap<ItemId, Vec<(ItemId, u32)>>,
    ranking: Vec<ItemId>,
}

impl CooccurrenceRec {
    pub fn new(neighborhood: usize) -> Self {
        Self {
            neighborhood,
            neighbors: HashMap::new(),
            ranking: Vec::new(),
        }
    }

    /// Co-occurrence count after neighbourhood pruning.
    pub fn cooccurrence(&self, a: &ItemId, b: &ItemId) -> u32 {
        self.neighbors
            .get(a)
            .and_then(|n| n.iter().find(|(item, _)| item == b))
            .map_or(0, |(_, c)| *c)
    }
}

impl Default for CooccurrenceRec {
    fn default() -> Self {
        Self::new(DEFAULT_NEIGHBORHOOD)
    }
}

impl Recommender for CooccurrenceRec {
    fn name(&self) -> &str {
        "cooc"
    }

    fn fit(&mut self, ctx: &FitContext<'_>) -> Result<()> {
        if ctx.train_events.is_empty() {
            return Err(Error::EmptyTraining);
        }
        self.ranking = popularity_ranking(ctx.train_events);
        let index: HashMap<&ItemId, u32> = self
            .ranking
            .iter()
            .enumerate()
            .map(|(i, item)| (item, i as u32))
            .collect();

        let mut baskets: BTreeMap<&UserId, BTreeSet<u32>> = BTreeMap::new();
        for e in ctx.train_events {
            baskets
                .entry(&e.user_id)
                .or_default()
                .insert(index[&e.item_id]);
        }
        let mut counts: Vec<HashMap<u32, u32>> = vec![HashMap::new(); self.ranking.len()];
        for basket in baskets.values() {
            let items: Vec<u32> = basket.iter().copied().collect();
            for (i, &a) in items.iter().enumerate() {
                for &b in &items[i + 1..] {
                    *counts[a as usize].entry(b).or_insert(0) += 1;
                    *counts[b as usize].entry(a).or_insert(0) += 1;
                }
            }
        }

        let ranking = &self.ranking;
        let neighborhood = self.neighborhood;
        self.neighbors = counts
            .into_iter()
            .enumerate()
            .filter(|(_, row)| !row.is_empty())
            .map(|(a, row)| {
                let mut row: Vec<(ItemId, u32)> = row
                    .into_iter()
                    .map(|(b, c)| (ranking[b as usize].clone(), c))
                    .collect();
                row.sort_by(|x, y| y.1.cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
                row.truncate(neighborhood);
                (ranking[a].clone(), row)
            })
            .collect();
        Ok(())
    }

    fn recommend(&self, user: &UserId, history: &[ItemId], k: usize) -> Result<RankedList> {
        let seen: HashSet<&ItemId> = history.iter().collect();
        let mut scores: HashMap<&ItemId, u64> = HashMap::new();
        for item in &seen {
            for (other, c) in self.neighbors.get(*item).into_iter().flatten() {
                if !seen.contains(other) {
                    *scores.entry(other).or_insert(0) += u64::from(*c);
                }
            }
        }
        let mut scored: Vec<(&ItemId, u64)> = scores.into_iter().collect();
        scored.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let picked: Vec<&ItemId> = scored.into_iter().take(k).map(|(i, _)| i).collect();
        if picked.len() < k {
            let mut excluded = seen;
            excluded.extend(picked.iter().copied());
            let fill = top_excluding(&self.ranking, &excluded, k - picked.len());
            let mut items: Vec<ItemId> = picked.into_iter().cloned().collect();
            items.extend(fill);
            return Ok(RankedList::new(user.clone(), items));
        }
        Ok(RankedList::new(user.clone(), picked.into_iter().cloned()))
    }

    fn concurrent_query_safe(&self) -> bool {
        true
    }
}

/// Answers every query with the user's held-out items. Only useful for
/// checking the harness itself: it should score perfectly.
#[derive(Clone, Debug, Default)]
pub struct OracleRec {
    truth: Truths,
}

impl OracleRec {
    pub fn new(truth: Truths) -> Self {
        Self { truth }
    }
}

impl Recommender for OracleRec {
    fn name(&self) -> &str {
        "oracle"
    }

    fn fit(&mut self, _ctx: &FitContext<'_>) -> Result<()> {
        Ok(())
    }

    fn recommend(&self, user: &UserId, _history: &[ItemId], k: usize) -> Result<RankedList> {
        let items = self.truth.get(user).into_iter().flatten().take(k).cloned();
        Ok(RankedList::new(user.clone(), items))
    }

    fn concurrent_query_safe(&self) -> bool {
        true
    }
}
