//! Accuracy metrics restricted to user groups and item-popularity buckets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, InteractionEvent, ItemId, UserId};
use crate::error::{Error, Result};
use crate::metrics::{index_predictions, mean_scores, GroundTruth, RankedList, UserScores};

pub const DEFAULT_BUCKETS: usize = 4;
pub const DEFAULT_SUPPORT_FLOOR: usize = 5;
pub const UNKNOWN_GROUP: &str = "unknown";
pub const UNSEEN_BUCKET: &str = "unseen";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceKind {
    UserCountry,
    UserGender,
    UserActivity,
    ItemPopularity,
    ColdStart,
}

impl SliceKind {
    pub const ALL: [SliceKind; 5] = [
        SliceKind::UserCountry,
        SliceKind::UserGender,
        SliceKind::UserActivity,
        SliceKind::ItemPopularity,
        SliceKind::ColdStart,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SliceKind::UserCountry => "user_country",
            SliceKind::UserGender => "user_gender",
            SliceKind::UserActivity => "user_activity",
            SliceKind::ItemPopularity => "item_popularity",
            SliceKind::ColdStart => "cold_start",
        }
    }

    fn is_quantile(self) -> bool {
        matches!(self, SliceKind::UserActivity | SliceKind::ItemPopularity)
    }
}

impl fmt::Display for SliceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SliceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SliceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownSliceKind(s.to_owned()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub kind: SliceKind,
    pub n_buckets: usize,
    pub support_floor: usize,
}

impl SliceSpec {
    pub fn new(kind: SliceKind) -> Self {
        Self {
            kind,
            n_buckets: DEFAULT_BUCKETS,
            support_floor: DEFAULT_SUPPORT_FLOOR,
        }
    }

    pub fn with_buckets(mut self, n_buckets: usize) -> Self {
        self.n_buckets = n_buckets;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.kind.is_quantile() && self.n_buckets < 2 {
            return Err(Error::InvalidParameter(format!(
                "{} slices need at least 2 buckets, got {}",
                self.kind, self.n_buckets
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub metrics: UserScores,
    pub members: usize,
    pub low_support: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub kind: SliceKind,
    pub groups: BTreeMap<String, GroupStats>,
    pub worst_group_hr: f64,
    pub hr_std_across_groups: f64,
}

impl SliceReport {
    pub fn group_hr(&self, label: &str) -> Option<f64> {
        self.groups.get(label).map(|g| g.metrics.hr)
    }

    pub fn population(&self) -> usize {
        self.groups.values().map(|g| g.members).sum()
    }
}

/// Deals `keys` (already sorted ascending by the ranking key) into
/// `n_buckets` equal-count quantile groups; position `i` of `n` goes to
/// bucket `i * n_buckets / n`.
fn quantile_labels<K: Clone + Ord>(
    keys: &[K],
    n_buckets: usize,
    prefix: &str,
) -> BTreeMap<K, String> {
    let n = keys.len();
    keys.iter()
        .enumerate()
        .map(|(i, key)| (key.clone(), format!("{prefix}_{}", i * n_buckets / n)))
        .collect()
}

/// Item → popularity bucket, `pop_0` being the least played.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PopularityBuckets {
    labels: BTreeMap<ItemId, String>,
}

impl PopularityBuckets {
    pub fn label(&self, item: &ItemId) -> &str {
        self.labels.get(item).map_or(UNSEEN_BUCKET, String::as_str)
    }

    pub fn labels(&self) -> &BTreeMap<ItemId, String> {
        &self.labels
    }
}

/// Total training playcount per item.
pub fn item_playcounts(train_events: &[InteractionEvent]) -> BTreeMap<ItemId, u64> {
    let mut counts = BTreeMap::new();
    for e in train_events {
        *counts.entry(e.item_id.clone()).or_insert(0) += u64::from(e.playcount);
    }
    counts
}

/// Ranks training items by (total playcount, item id) ascending and splits
/// them into `n_buckets` quantile groups.
pub fn popularity_buckets(
    train_events: &[InteractionEvent],
    n_buckets: usize,
) -> Result<PopularityBuckets> {
    if train_events.is_empty() {
        return Err(Error::EmptyTraining);
    }
    if n_buckets < 2 {
        return Err(Error::InvalidParameter(
            "popularity slices need at least 2 buckets".into(),
        ));
    }
    let counts = item_playcounts(train_events);
    let mut ranked: Vec<(u64, ItemId)> = counts.into_iter().map(|(item, c)| (c, item)).collect();
    ranked.sort();
    let labels = quantile_labels(&ranked, n_buckets, "pop")
        .into_iter()
        .map(|((_, item), label)| (item, label))
        .collect();
    Ok(PopularityBuckets { labels })
}

const INACTIVE_GROUP: &str = "act_none";

/// User → activity bucket from training playcount quantiles. Users without
/// training events land in `act_none`.
fn activity_labels(
    train_events: &[InteractionEvent],
    n_buckets: usize,
) -> BTreeMap<UserId, String> {
    let mut totals: BTreeMap<UserId, u64> = BTreeMap::new();
    for e in train_events {
        *totals.entry(e.user_id.clone()).or_insert(0) += u64::from(e.playcount);
    }
    let mut ranked: Vec<(u64, UserId)> = totals.into_iter().map(|(u, c)| (c, u)).collect();
    ranked.sort();
    if ranked.is_empty() {
        return BTreeMap::new();
    }
    quantile_labels(&ranked, n_buckets, "act")
        .into_iter()
        .map(|((_, user), label)| (user, label))
        .collect()
}

/// What [`slice_evaluate`] needs beyond predictions and truths.
#[derive(Clone, Copy, Debug)]
pub struct SliceContext<'a> {
    pub dataset: &'a Dataset,
    pub train_events: &'a [InteractionEvent],
    pub cold_start_users: &'a BTreeSet<UserId>,
}

fn metadata_label(value: Option<&String>) -> String {
    match value {
        Some(v) if !v.is_empty() => v.clone(),
        _ => UNKNOWN_GROUP.to_owned(),
    }
}

/// Groups the evaluated population according to `spec` and averages the
/// per-member metrics within each group.
///
/// User-keyed kinds group whole users. `ItemPopularity` evaluates every
/// (user, truth item) pair separately: the pair is scored as if the item
/// were the user's only relevant item, and lands in that item's bucket.
pub fn slice_evaluate(
    all_preds: &[RankedList],
    all_truths: &[GroundTruth],
    ctx: &SliceContext<'_>,
    spec: &SliceSpec,
    k: usize,
) -> Result<SliceReport> {
    spec.validate()?;
    if k == 0 {
        return Err(Error::InvalidCutoff);
    }
    let by_user = index_predictions(all_preds);
    let mut members: BTreeMap<String, Vec<UserScores>> = BTreeMap::new();

    if spec.kind == SliceKind::ItemPopularity {
        let buckets = popularity_buckets(ctx.train_events, spec.n_buckets)?;
        for truth in all_truths {
            let ranks: HashMap<&ItemId, usize> = by_user
                .get(&truth.user_id)
                .map(|p| {
                    p.top(k)
                        .iter()
                        .enumerate()
                        .map(|(i, item)| (item, i + 1))
                        .collect()
                })
                .unwrap_or_default();
            for item in truth.relevant() {
                let scores = match ranks.get(item) {
                    Some(&rank) => UserScores {
                        hr: 1.0,
                        mrr: 1.0 / rank as f64,
                        ndcg: 1.0 / ((rank + 1) as f64).log2(),
                        map: 1.0 / rank as f64,
                    },
                    None => UserScores::MISS,
                };
                members
                    .entry(buckets.label(item).to_owned())
                    .or_default()
                    .push(scores);
            }
        }
    } else {
        let activity = match spec.kind {
            SliceKind::UserActivity => activity_labels(ctx.train_events, spec.n_buckets),
            _ => BTreeMap::new(),
        };
        for truth in all_truths {
            let user = &truth.user_id;
            let record = ctx.dataset.user(user);
            let label = match spec.kind {
                SliceKind::UserCountry => metadata_label(record.and_then(|r| r.country.as_ref())),
                SliceKind::UserGender => metadata_label(record.and_then(|r| r.gender.as_ref())),
                SliceKind::UserActivity => activity
                    .get(user)
                    .cloned()
                    .unwrap_or_else(|| INACTIVE_GROUP.to_owned()),
                SliceKind::ColdStart => if ctx.cold_start_users.contains(user) {
                    "cold"
                } else {
                    "warm"
                }
                .to_owned(),
                SliceKind::ItemPopularity => unreachable!(),
            };
            let scores = match by_user.get(user) {
                Some(preds) => UserScores::compute(preds, truth, k)?,
                None => UserScores::MISS,
            };
            members.entry(label).or_default().push(scores);
        }
    }

    Ok(summarize(spec, members))
}

fn summarize(spec: &SliceSpec, members: BTreeMap<String, Vec<UserScores>>) -> SliceReport {
    let groups: BTreeMap<String, GroupStats> = members
        .into_iter()
        .map(|(label, scores)| {
            let (metrics, n) = mean_scores(&scores);
            let stats = GroupStats {
                metrics,
                members: n,
                low_support: n < spec.support_floor,
            };
            (label, stats)
        })
        .collect();
    let hrs: Vec<f64> = groups.values().map(|g| g.metrics.hr).collect();
    let worst_group_hr = hrs.iter().copied().fold(f64::INFINITY, f64::min);
    let hr_std_across_groups = if hrs.is_empty() {
        0.0
    } else {
        let mean = hrs.iter().sum::<f64>() / hrs.len() as f64;
        (hrs.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / hrs.len() as f64).sqrt()
    };
    SliceReport {
        kind: spec.kind,
        groups,
        worst_group_hr: if hrs.is_empty() { 0.0 } else { worst_group_hr },
        hr_std_across_groups,
    }
}
