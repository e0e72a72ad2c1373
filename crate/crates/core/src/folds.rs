//! Seeded k-fold partition of the event log and the rotating
//! train / validation / test schedule.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, InteractionEvent, ItemId, UserId};
use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 5;

/// Fold assignment for every event, indexed by canonical event position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_str(&body)?)
    }
}

/// One step of the rotation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSplit {
    pub run_id: usize,
    pub train_folds: BTreeSet<usize>,
    pub val_fold: usize,
    pub test_fold: usize,
}

/// Whether held-out items the user already played in training stay in the
/// ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TruthPolicy {
    #[default]
    KeepSeen,
    DropSeen,
}

pub type Truths = BTreeMap<UserId, BTreeSet<ItemId>>;

/// The data one rotation step works with.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMaterialization {
    pub split: RunSplit,
    pub train_events: Vec<InteractionEvent>,
    pub val_truth: Truths,
    pub test_truth: Truths,
    pub cold_start_users: BTreeSet<UserId>,
}

impl SplitMaterialization {
    /// Training events grouped per user, canonical order preserved.
    pub fn train_histories(&self) -> BTreeMap<UserId, Vec<InteractionEvent>> {
        let mut out: BTreeMap<UserId, Vec<InteractionEvent>> = BTreeMap::new();
        for e in &self.train_events {
            out.entry(e.user_id.clone()).or_default().push(e.clone());
        }
        out
    }
}

fn check_k(k: usize) -> Result<()> {
    if k < 3 {
        Err(Error::InvalidK(k))
    } else {
        Ok(())
    }
}

/// Shuffles event indices with a seeded generator and deals them out
/// round-robin, so fold sizes differ by at most one.
pub fn partition(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    check_k(k)?;
    let n = dataset.events().len();
    if n < k {
        return Err(Error::TooFewEvents { events: n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &event) in order.iter().enumerate() {
        assignment[event] = pos % k;
    }
    Ok(FoldPlan {
        k,
        seed,
        assignment,
    })
}

/// Run `r` tests on fold `(k - 1 + r) mod k` and validates on the fold just
/// before it; the remaining `k - 2` folds train.
pub fn rotation_schedule(k: usize) -> Result<Vec<RunSplit>> {
    check_k(k)?;
    Ok((0..k)
        .map(|run_id| {
            let test_fold = (k - 1 + run_id) % k;
            let val_fold = (test_fold + k - 1) % k;
            let train_folds = (0..k)
                .filter(|&f| f != test_fold && f != val_fold)
                .collect();
            RunSplit {
                run_id,
                train_folds,
                val_fold,
                test_fold,
            }
        })
        .collect())
}

pub fn materialize_split(
    dataset: &Dataset,
    plan: &FoldPlan,
    split: &RunSplit,
) -> Result<SplitMaterialization> {
    materialize_split_with(dataset, plan, split, TruthPolicy::KeepSeen)
}

pub fn materialize_split_with(
    dataset: &Dataset,
    plan: &FoldPlan,
    split: &RunSplit,
    policy: TruthPolicy,
) -> Result<SplitMaterialization> {
    validate_split(plan, split)?;
    if plan.assignment.len() != dataset.events().len() {
        return Err(Error::InconsistentSplit(format!(
            "plan covers {} events but the dataset has {}",
            plan.assignment.len(),
            dataset.events().len()
        )));
    }

    let mut train_events = Vec::new();
    let mut val_truth = Truths::new();
    let mut test_truth = Truths::new();
    for (event, &fold) in dataset.events().iter().zip(&plan.assignment) {
        if fold == split.test_fold {
            test_truth
                .entry(event.user_id.clone())
                .or_default()
                .insert(event.item_id.clone());
        } else if fold == split.val_fold {
            val_truth
                .entry(event.user_id.clone())
                .or_default()
                .insert(event.item_id.clone());
        } else {
            train_events.push(event.clone());
        }
    }

    let mut seen: BTreeMap<&UserId, BTreeSet<&ItemId>> = BTreeMap::new();
    for e in &train_events {
        seen.entry(&e.user_id).or_default().insert(&e.item_id);
    }
    if policy == TruthPolicy::DropSeen {
        for truths in [&mut val_truth, &mut test_truth] {
            truths.retain(|user, items| {
                if let Some(played) = seen.get(user) {
                    items.retain(|i| !played.contains(i));
                }
                !items.is_empty()
            });
        }
    }
    let cold_start_users = test_truth
        .keys()
        .filter(|u| !seen.contains_key(u))
        .cloned()
        .collect();

    Ok(SplitMaterialization {
        split: split.clone(),
        train_events,
        val_truth,
        test_truth,
        cold_start_users,
    })
}

fn validate_split(plan: &FoldPlan, split: &RunSplit) -> Result<()> {
    let k = plan.k;
    let bad = |msg: String| Err(Error::InconsistentSplit(msg));
    if split.test_fold >= k || split.val_fold >= k || split.train_folds.iter().any(|&f| f >= k) {
        return bad(format!("fold id out of range for k={k}"));
    }
    if split.test_fold == split.val_fold
        || split.train_folds.contains(&split.test_fold)
        || split.train_folds.contains(&split.val_fold)
    {
        return bad("train, validation and test folds overlap".into());
    }
    if split.train_folds.len() + 2 != k {
        return bad(format!("split does not cover all {k} folds"));
    }
    if plan.assignment.iter().any(|&f| f >= k) {
        return bad("plan assigns an event to a fold outside 0..k".into());
    }
    Ok(())
}
