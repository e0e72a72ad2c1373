//! Binary-relevance top-K ranking metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::datamodel::{ItemId, UserId};
use crate::error::{Error, Result};

/// A model's answer for one user: items in rank order, position 0 first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub user_id: UserId,
    pub items: Vec<ItemId>,
}

impl RankedList {
    /// Builds a list, dropping repeated items (first occurrence wins).
    pub fn new(user_id: impl Into<UserId>, items: impl IntoIterator<Item = ItemId>) -> Self {
        let mut seen = HashSet::new();
        let items = items
            .into_iter()
            .filter(|i| seen.insert(i.clone()))
            .collect();
        Self {
            user_id: user_id.into(),
            items,
        }
    }

    pub fn empty(user_id: impl Into<UserId>) -> Self {
        Self {
            user_id: user_id.into(),
            items: Vec::new(),
        }
    }

    pub fn top(&self, k: usize) -> &[ItemId] {
        &self.items[..self.items.len().min(k)]
    }

    pub fn has_duplicates(&self) -> bool {
        let mut seen = HashSet::with_capacity(self.items.len());
        !self.items.iter().all(|i| seen.insert(i))
    }
}

/// Held-out relevant items for one user. Never empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub user_id: UserId,
    relevant: BTreeSet<ItemId>,
}

impl GroundTruth {
    pub fn new(
        user_id: impl Into<UserId>,
        relevant: impl IntoIterator<Item = ItemId>,
    ) -> Result<Self> {
        let relevant: BTreeSet<ItemId> = relevant.into_iter().collect();
        if relevant.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            user_id: user_id.into(),
            relevant,
        })
    }

    pub fn relevant(&self) -> &BTreeSet<ItemId> {
        &self.relevant
    }

    pub fn contains(&self, item: &ItemId) -> bool {
        self.relevant.contains(item)
    }
}

/// Converts fold truths into [`GroundTruth`] values, skipping empty sets.
pub fn truths_from_map(map: &BTreeMap<UserId, BTreeSet<ItemId>>) -> Vec<GroundTruth> {
    map.iter()
        .filter(|(_, items)| !items.is_empty())
        .map(|(user, items)| GroundTruth {
            user_id: user.clone(),
            relevant: items.clone(),
        })
        .collect()
}

fn check(preds: &RankedList, truth: &GroundTruth, k: usize) -> Result<()> {
    if preds.user_id != truth.user_id {
        return Err(Error::UserMismatch {
            preds: preds.user_id.0.clone(),
            truth: truth.user_id.0.clone(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidCutoff);
    }
    Ok(())
}

/// 1-based positions of relevant items within the top `k`.
fn hit_positions<'a>(
    preds: &'a RankedList,
    truth: &'a GroundTruth,
    k: usize,
) -> impl Iterator<Item = usize> + 'a {
    preds
        .top(k)
        .iter()
        .enumerate()
        .filter(|(_, item)| truth.contains(item))
        .map(|(idx, _)| idx + 1)
}

pub fn hit_rate_at_k(preds: &RankedList, truth: &GroundTruth, k: usize) -> Result<f64> {
    check(preds, truth, k)?;
    Ok(if hit_positions(preds, truth, k).next().is_some() {
        1.0
    } else {
        0.0
    })
}

pub fn mrr_at_k(preds: &RankedList, truth: &GroundTruth, k: usize) -> Result<f64> {
    check(preds, truth, k)?;
    Ok(hit_positions(preds, truth, k)
        .next()
        .map_or(0.0, |p| 1.0 / p as f64))
}

fn discount(position: usize) -> f64 {
    1.0 / ((position + 1) as f64).log2()
}

/// DCG with gain 1 per relevant item, normalized by the DCG of
/// `min(|truth|, k)` relevant items placed first.
pub fn ndcg_at_k(preds: &RankedList, truth: &GroundTruth, k: usize) -> Result<f64> {
    check(preds, truth, k)?;
    let dcg: f64 = hit_positions(preds, truth, k).map(discount).sum();
    let ideal = truth.relevant.len().min(k);
    let idcg: f64 = (1..=ideal).map(discount).sum();
    Ok(dcg / idcg)
}

/// Average precision over hits in the top `k`, normalized by `min(|truth|, k)`.
pub fn map_at_k(preds: &RankedList, truth: &GroundTruth, k: usize) -> Result<f64> {
    check(preds, truth, k)?;
    let precision_sum: f64 = hit_positions(preds, truth, k)
        .enumerate()
        .map(|(hits_before, pos)| (hits_before + 1) as f64 / pos as f64)
        .sum();
    Ok(precision_sum / truth.relevant.len().min(k) as f64)
}

/// Fraction of the catalog recommended to at least one user.
pub fn coverage<'a>(
    all_preds: impl IntoIterator<Item = &'a RankedList>,
    catalog_size: usize,
) -> Result<f64> {
    coverage_at_k(all_preds, catalog_size, usize::MAX)
}

pub fn coverage_at_k<'a>(
    all_preds: impl IntoIterator<Item = &'a RankedList>,
    catalog_size: usize,
    k: usize,
) -> Result<f64> {
    if catalog_size == 0 {
        return Err(Error::InvalidCatalogSize);
    }
    let distinct: HashSet<&ItemId> = all_preds.into_iter().flat_map(|p| p.top(k)).collect();
    Ok((distinct.len() as f64 / catalog_size as f64).min(1.0))
}

/// Per-user values of the four accuracy metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UserScores {
    pub hr: f64,
    pub mrr: f64,
    pub ndcg: f64,
    pub map: f64,
}

impl UserScores {
    pub fn compute(preds: &RankedList, truth: &GroundTruth, k: usize) -> Result<Self> {
        Ok(Self {
            hr: hit_rate_at_k(preds, truth, k)?,
            mrr: mrr_at_k(preds, truth, k)?,
            ndcg: ndcg_at_k(preds, truth, k)?,
            map: map_at_k(preds, truth, k)?,
        })
    }

    /// Scores of a user the model gave no list to.
    pub const MISS: UserScores = UserScores {
        hr: 0.0,
        mrr: 0.0,
        ndcg: 0.0,
        map: 0.0,
    };
}

/// Arithmetic means of [`UserScores`] in a fixed summation order.
pub fn mean_scores<'a>(scores: impl IntoIterator<Item = &'a UserScores>) -> (UserScores, usize) {
    let mut sum = UserScores::default();
    let mut n = 0usize;
    for s in scores {
        sum.hr += s.hr;
        sum.mrr += s.mrr;
        sum.ndcg += s.ndcg;
        sum.map += s.map;
        n += 1;
    }
    if n == 0 {
        return (sum, 0);
    }
    let d = n as f64;
    (
        UserScores {
            hr: sum.hr / d,
            mrr: sum.mrr / d,
            ndcg: sum.ndcg / d,
            map: sum.map / d,
        },
        n,
    )
}

/// Index of prediction lists by user.
pub fn index_predictions(all_preds: &[RankedList]) -> HashMap<&UserId, &RankedList> {
    all_preds.iter().map(|p| (&p.user_id, p)).collect()
}

/// Per-user scores for every ground-truth user, keyed (and therefore summed)
/// in user-id order. Users without a prediction list score [`UserScores::MISS`].
pub fn per_user_scores(
    all_preds: &[RankedList],
    all_truths: &[GroundTruth],
    k: usize,
) -> Result<BTreeMap<UserId, UserScores>> {
    if k == 0 {
        return Err(Error::InvalidCutoff);
    }
    let by_user = index_predictions(all_preds);
    all_truths
        .iter()
        .map(|truth| {
            let scores = match by_user.get(&truth.user_id) {
                Some(preds) => UserScores::compute(preds, truth, k)?,
                None => UserScores::MISS,
            };
            Ok((truth.user_id.clone(), scores))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub hr_at_k: f64,
    pub mrr_at_k: f64,
    pub ndcg_at_k: f64,
    pub map_at_k: f64,
    pub coverage: f64,
    pub k: usize,
    pub n_users: usize,
}

/// Standard metric bundle: accuracy metrics averaged over ground-truth
/// users, coverage over all lists (top `k` of each).
pub fn evaluate_standard(
    all_preds: &[RankedList],
    all_truths: &[GroundTruth],
    k: usize,
    catalog_size: usize,
) -> Result<MetricReport> {
    let per_user = per_user_scores(all_preds, all_truths, k)?;
    let (mean, n_users) = mean_scores(per_user.values());
    Ok(MetricReport {
        hr_at_k: mean.hr,
        mrr_at_k: mean.mrr,
        ndcg_at_k: mean.ndcg,
        map_at_k: mean.map,
        coverage: coverage_at_k(all_preds, catalog_size, k)?,
        k,
        n_users,
    })
}
