//! Behavioral tests: stability of recommendations under a single-item
//! history swap, and graded distance of misses using item metadata.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{InteractionEvent, ItemId, ItemRecord, UserId};
use crate::error::{Error, Result};
use crate::metrics::{index_predictions, GroundTruth, RankedList};
use crate::model::{recommend_batch, ModelHandle, Query};
use crate::seeding::derive_seed;
use crate::slices::item_playcounts;

pub const DEFAULT_SAMPLE_USERS: usize = 1000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationStrategy {
    /// Replace one history item with another track by the same artist.
    #[default]
    SameArtistSwap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub n_sample_users: usize,
    pub seed: u64,
    pub strategy: PerturbationStrategy,
}

impl PerturbationSpec {
    pub fn new(n_sample_users: usize, seed: u64) -> Result<Self> {
        if n_sample_users == 0 {
            return Err(Error::InvalidParameter(
                "n_sample_users must be at least 1".into(),
            ));
        }
        Ok(Self {
            n_sample_users,
            seed,
            strategy: PerturbationStrategy::SameArtistSwap,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapRecord {
    pub position: usize,
    pub old_item: ItemId,
    pub new_item: ItemId,
}

/// Catalog lookups used to pick replacement items.
#[derive(Clone, Debug)]
pub struct PerturbationIndex {
    artist_of: HashMap<ItemId, String>,
    by_artist: HashMap<String, Vec<ItemId>>,
    /// Whole catalog, most played in training first, ties by item id.
    popularity: Vec<ItemId>,
    rank: HashMap<ItemId, usize>,
}

impl PerturbationIndex {
    pub fn new<'a>(
        items: impl IntoIterator<Item = &'a ItemRecord>,
        train_events: &[InteractionEvent],
    ) -> Self {
        let counts = item_playcounts(train_events);
        let mut artist_of = HashMap::new();
        let mut by_artist: HashMap<String, Vec<ItemId>> = HashMap::new();
        let mut ranked: Vec<(u64, ItemId)> = Vec::new();
        for item in items {
            artist_of.insert(item.item_id.clone(), item.artist_id.clone());
            by_artist
                .entry(item.artist_id.clone())
                .or_default()
                .push(item.item_id.clone());
            ranked.push((
                counts.get(&item.item_id).copied().unwrap_or(0),
                item.item_id.clone(),
            ));
        }
        for tracks in by_artist.values_mut() {
            tracks.sort();
        }
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let popularity: Vec<ItemId> = ranked.into_iter().map(|(_, i)| i).collect();
        let rank = popularity
            .iter()
            .enumerate()
            .map(|(r, i)| (i.clone(), r))
            .collect();
        Self {
            artist_of,
            by_artist,
            popularity,
            rank,
        }
    }

    /// Replacement for `item`: a uniformly chosen other track by the same
    /// artist, else the neighbour in popularity rank (the more popular one
    /// when both exist).
    pub fn replacement(&self, item: &ItemId, rng: &mut impl Rng) -> Result<ItemId> {
        let artist = self
            .artist_of
            .get(item)
            .ok_or_else(|| Error::UnknownItem(item.0.clone()))?;
        let siblings: Vec<&ItemId> = self.by_artist[artist]
            .iter()
            .filter(|i| *i != item)
            .collect();
        if let Some(choice) = siblings.choose(rng) {
            return Ok((*choice).clone());
        }
        let r = self.rank[item];
        let neighbour = if r > 0 {
            self.popularity.get(r - 1)
        } else {
            self.popularity.get(r + 1)
        };
        neighbour
            .cloned()
            .ok_or_else(|| Error::NoReplacement(item.0.clone()))
    }

    pub fn popularity_rank(&self, item: &ItemId) -> Option<usize> {
        self.rank.get(item).copied()
    }
}

/// Swaps the item of one uniformly chosen event; every other field and
/// event is kept.
pub fn perturb_history(
    history: &[InteractionEvent],
    index: &PerturbationIndex,
    rng: &mut impl Rng,
) -> Result<(Vec<InteractionEvent>, SwapRecord)> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let position = rng.gen_range(0..history.len());
    let old_item = history[position].item_id.clone();
    let new_item = index.replacement(&old_item, rng)?;
    let mut perturbed = history.to_vec();
    perturbed[position].item_id = new_item.clone();
    Ok((
        perturbed,
        SwapRecord {
            position,
            old_item,
            new_item,
        },
    ))
}

pub fn jaccard(a: &[ItemId], b: &[ItemId]) -> f64 {
    let a: HashSet<&ItemId> = a.iter().collect();
    let b: HashSet<&ItemId> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Deterministic sample of at most `n` users.
pub fn sample_users(candidates: &BTreeSet<UserId>, n: usize, seed: u64) -> Vec<UserId> {
    let mut pool: Vec<UserId> = candidates.iter().cloned().collect();
    if pool.len() > n {
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        pool.truncate(n);
        pool.sort();
    }
    pool
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub mean_jaccard: f64,
    pub per_user: BTreeMap<UserId, f64>,
    pub swaps: BTreeMap<UserId, SwapRecord>,
    pub n_evaluated: usize,
    pub n_skipped: usize,
}

/// Queries the fitted model with each sampled user's original and perturbed
/// history and scores the Jaccard overlap of the two top-`k` lists. Users
/// with no history are skipped. With nothing evaluated the mean is 1.0.
pub fn stability_test(
    model: &ModelHandle,
    users: &[UserId],
    histories: &BTreeMap<UserId, Vec<InteractionEvent>>,
    index: &PerturbationIndex,
    spec: &PerturbationSpec,
    k: usize,
) -> Result<StabilityReport> {
    let mut original = Vec::new();
    let mut perturbed = Vec::new();
    let mut swaps = BTreeMap::new();
    let mut n_skipped = 0;
    for user in users {
        let history = match histories.get(user) {
            Some(h) if !h.is_empty() => h,
            _ => {
                n_skipped += 1;
                continue;
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, user.as_str()));
        let (changed, swap) = perturb_history(history, index, &mut rng)?;
        original.push(Query {
            user_id: user.clone(),
            history: history.iter().map(|e| e.item_id.clone()).collect(),
        });
        perturbed.push(Query {
            user_id: user.clone(),
            history: changed.into_iter().map(|e| e.item_id).collect(),
        });
        swaps.insert(user.clone(), swap);
    }

    let before = recommend_batch(model, &original, k)?;
    let after = recommend_batch(model, &perturbed, k)?;
    let per_user: BTreeMap<UserId, f64> = before
        .iter()
        .zip(&after)
        .map(|(b, a)| (b.user_id.clone(), jaccard(b.top(k), a.top(k))))
        .collect();
    let n_evaluated = per_user.len();
    let mean_jaccard = if n_evaluated == 0 {
        1.0
    } else {
        per_user.values().sum::<f64>() / n_evaluated as f64
    };
    Ok(StabilityReport {
        mean_jaccard,
        per_user,
        swaps,
        n_evaluated,
        n_skipped,
    })
}

pub const SAME_ARTIST_DISTANCE: f64 = 0.5;

/// 0 for the same item, 0.5 for distinct tracks by one artist, 1 otherwise.
pub fn item_distance(a: &ItemRecord, b: &ItemRecord) -> f64 {
    if a.item_id == b.item_id {
        0.0
    } else if a.artist_id == b.artist_id {
        SAME_ARTIST_DISTANCE
    } else {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistanceReport {
    pub mean_distance: f64,
    pub quality: f64,
    pub per_user: BTreeMap<UserId, f64>,
}

/// Per user, the smallest metadata distance between any top-`k` prediction
/// and any truth item; users without predictions are at distance 1.
pub fn error_distance_test(
    all_preds: &[RankedList],
    all_truths: &[GroundTruth],
    items: &BTreeMap<ItemId, ItemRecord>,
    k: usize,
) -> Result<ErrorDistanceReport> {
    if k == 0 {
        return Err(Error::InvalidCutoff);
    }
    let lookup = |id: &ItemId| {
        items
            .get(id)
            .ok_or_else(|| Error::UnknownItem(id.0.clone()))
    };
    let by_user = index_predictions(all_preds);
    let mut per_user = BTreeMap::new();
    for truth in all_truths {
        let truth_items = truth
            .relevant()
            .iter()
            .map(lookup)
            .collect::<Result<Vec<_>>>()?;
        let mut best: f64 = 1.0;
        if let Some(preds) = by_user.get(&truth.user_id) {
            for p in preds.top(k) {
                let p = lookup(p)?;
                for t in &truth_items {
                    best = best.min(item_distance(p, t));
                }
            }
        }
        per_user.insert(truth.user_id.clone(), best);
    }
    let mean_distance = if per_user.is_empty() {
        0.0
    } else {
        per_user.values().sum::<f64>() / per_user.len() as f64
    };
    Ok(ErrorDistanceReport {
        mean_distance,
        quality: 1.0 - mean_distance,
        per_user,
    })
}
