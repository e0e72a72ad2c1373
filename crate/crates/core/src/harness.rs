//! The full evaluation loop: partition, rotate, fit, query, score every test
//! tier, aggregate.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde_json::Value;

use crate::behavioral::{
    error_distance_test, sample_users, stability_test, PerturbationIndex, PerturbationSpec,
    DEFAULT_SAMPLE_USERS,
};
use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::external::{ExternalCommand, ExternalModel};
use crate::folds::{
    materialize_split_with, partition, rotation_schedule, FoldPlan, SplitMaterialization,
    TruthPolicy,
};
use crate::metrics::{evaluate_standard, per_user_scores, truths_from_map, RankedList};
use crate::model::{
    recommend_batch, train, CooccurrenceRec, FitContext, HyperparameterSetting, ModelHandle,
    OracleRec, PopularityRec, Query, RandomRec, TrainBudget, DEFAULT_BUDGET, DEFAULT_NEIGHBORHOOD,
};
use crate::report::{ReportMeta, RunRecord, RunReport, TestResult, HARNESS_VERSION};
use crate::scoring::aggregate;
use crate::seeding::derive_seed;
use crate::slices::{
    slice_evaluate, SliceContext, SliceKind, SliceReport, SliceSpec, DEFAULT_BUCKETS,
    DEFAULT_SUPPORT_FLOOR,
};

pub const DEFAULT_TOP_K: usize = 20;

pub mod test_ids {
    pub const HR: &str = "hr_at_k";
    pub const MRR: &str = "mrr_at_k";
    pub const NDCG: &str = "ndcg_at_k";
    pub const MAP: &str = "map_at_k";
    pub const COVERAGE: &str = "coverage";
    pub const SLICE_COUNTRY: &str = "slice.country.worst";
    pub const SLICE_GENDER: &str = "slice.gender.worst";
    pub const SLICE_ACTIVITY: &str = "slice.activity.worst";
    pub const SLICE_POPULARITY: &str = "slice.popularity.worst";
    pub const SLICE_COLD_START: &str = "slice.cold_start.hr";
    pub const STABILITY: &str = "behavioral.stability";
    pub const ERROR_QUALITY: &str = "behavioral.error_quality";

    /// Every test the loop emits, in report order.
    pub const ALL: [&str; 12] = [
        HR,
        MRR,
        NDCG,
        MAP,
        COVERAGE,
        SLICE_COUNTRY,
        SLICE_GENDER,
        SLICE_ACTIVITY,
        SLICE_POPULARITY,
        SLICE_COLD_START,
        STABILITY,
        ERROR_QUALITY,
    ];

    /// Tests averaged into the final score unless configured otherwise.
    pub const DEFAULT_INCLUDED: [&str; 9] = [
        HR,
        MRR,
        NDCG,
        MAP,
        SLICE_COUNTRY,
        SLICE_POPULARITY,
        SLICE_COLD_START,
        STABILITY,
        ERROR_QUALITY,
    ];
}

/// Parameters of one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub k: usize,
    pub folds: usize,
    pub seed: u64,
    pub included_tests: BTreeSet<String>,
    pub perturbation_sample: usize,
    pub budget: usize,
    pub truth_policy: TruthPolicy,
    pub slice_buckets: usize,
    pub support_floor: usize,
    pub setting: HyperparameterSetting,
    pub parallel_runs: bool,
    pub per_user_values: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            folds: crate::folds::DEFAULT_FOLDS,
            seed: 0,
            included_tests: test_ids::DEFAULT_INCLUDED
                .iter()
                .map(|s| s.to_string())
                .collect(),
            perturbation_sample: DEFAULT_SAMPLE_USERS,
            budget: DEFAULT_BUDGET,
            truth_policy: TruthPolicy::KeepSeen,
            slice_buckets: DEFAULT_BUCKETS,
            support_floor: DEFAULT_SUPPORT_FLOOR,
            setting: HyperparameterSetting::new(),
            parallel_runs: false,
            per_user_values: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 3 {
            return Err(Error::InvalidK(self.folds));
        }
        if self.k == 0 {
            return Err(Error::InvalidCutoff);
        }
        if self.budget == 0 {
            return Err(Error::InvalidParameter("budget must be at least 1".into()));
        }
        if self.perturbation_sample == 0 {
            return Err(Error::InvalidParameter(
                "perturbation sample must be at least 1".into(),
            ));
        }
        if self.included_tests.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one test must be included".into(),
            ));
        }
        for t in &self.included_tests {
            if !test_ids::ALL.contains(&t.as_str()) {
                return Err(Error::UnknownTest(t.clone()));
            }
        }
        Ok(())
    }

    fn settings_block(&self) -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        m.insert("budget".into(), Value::from(self.budget));
        m.insert(
            "perturbation_sample".into(),
            Value::from(self.perturbation_sample),
        );
        m.insert(
            "truth_policy".into(),
            Value::from(match self.truth_policy {
                TruthPolicy::KeepSeen => "keep_seen",
                TruthPolicy::DropSeen => "drop_seen",
            }),
        );
        m.insert("slice_buckets".into(), Value::from(self.slice_buckets));
        m.insert("support_floor".into(), Value::from(self.support_floor));
        m.insert(
            "setting".into(),
            serde_json::to_value(&self.setting).unwrap_or(Value::Null),
        );
        m
    }
}

/// Builds a fresh model for each run of the rotation.
pub trait ModelFactory: Sync {
    fn build(&self, split: &SplitMaterialization) -> Result<ModelHandle>;

    /// Name recorded in the report.
    fn model_name(&self) -> String;

    /// Whether different runs may evaluate concurrently.
    fn parallel_safe(&self) -> bool {
        true
    }
}

/// The models selectable by name.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelChoice {
    Random {
        seed: u64,
    },
    Popularity {
        exclude_seen: bool,
    },
    Cooccurrence {
        neighborhood: usize,
    },
    /// Returns the held-out truth. Scores 1.0 on every test when no user
    /// has more than `k` held-out items.
    Oracle,
    External(ExternalCommand),
}

impl ModelChoice {
    /// Parses `random`, `popularity`, `cooc`, `oracle` or `external:<cmd>`.
    pub fn parse(spec: &str, seed: u64, exclude_seen: bool) -> Result<Self> {
        match spec {
            "random" => Ok(Self::Random { seed }),
            "popularity" => Ok(Self::Popularity { exclude_seen }),
            "cooc" => Ok(Self::Cooccurrence {
                neighborhood: DEFAULT_NEIGHBORHOOD,
            }),
            "oracle" => Ok(Self::Oracle),
            other => match other.strip_prefix("external:") {
                Some(cmd) => Ok(Self::External(ExternalCommand::parse(cmd)?)),
                None => Err(Error::InvalidParameter(format!(
                    "unknown model {other:?}; expected random, popularity, cooc, oracle or external:<cmd>"
                ))),
            },
        }
    }
}

impl ModelFactory for ModelChoice {
    fn build(&self, split: &SplitMaterialization) -> Result<ModelHandle> {
        Ok(match self {
            Self::Random { seed } => ModelHandle::in_process(RandomRec::new(*seed)),
            Self::Popularity { exclude_seen } => {
                ModelHandle::in_process(PopularityRec::new(*exclude_seen))
            }
            Self::Cooccurrence { neighborhood } => {
                ModelHandle::in_process(CooccurrenceRec::new(*neighborhood))
            }
            Self::Oracle => ModelHandle::in_process(OracleRec::new(split.test_truth.clone())),
            Self::External(cmd) => ModelHandle::with_binding(
                Box::new(ExternalModel::new(cmd.clone())),
                crate::model::Binding::External {
                    command: cmd.command_line(),
                    working_dir: cmd.working_dir.clone(),
                },
            ),
        })
    }

    fn model_name(&self) -> String {
        match self {
            Self::Random { .. } => "random".into(),
            Self::Popularity {
                exclude_seen: false,
            } => "popularity".into(),
            Self::Popularity { exclude_seen: true } => "popularity(exclude_seen)".into(),
            Self::Cooccurrence { neighborhood } => format!("cooc(neighborhood={neighborhood})"),
            Self::Oracle => "oracle".into(),
            Self::External(cmd) => format!("external:{}", cmd.command_line().join(" ")),
        }
    }

    fn parallel_safe(&self) -> bool {
        !matches!(self, Self::External(_))
    }
}

#[derive(Default)]
struct Timings(BTreeMap<&'static str, Duration>);

impl Timings {
    fn time<T>(&mut self, phase: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.0.entry(phase).or_default() += start.elapsed();
        out
    }
}

struct RunOutcome {
    record: RunRecord,
    results: Vec<TestResult>,
    per_user: BTreeMap<String, Vec<f64>>,
    timings: Timings,
}

fn slice_value(report: &SliceReport) -> f64 {
    report.worst_group_hr
}

fn evaluate_run(
    dataset: &Dataset,
    plan: &FoldPlan,
    split: &crate::folds::RunSplit,
    cfg: &EvalConfig,
    factory: &dyn ModelFactory,
) -> Result<RunOutcome> {
    let run_id = split.run_id;
    let mut timings = Timings::default();
    let with_run = |e: Error| match e {
        Error::ModelQueryFailure { user, reason } => Error::ModelQueryFailure {
            user,
            reason: format!("run {run_id}: {reason}"),
        },
        other => other,
    };

    let mat = timings.time("materialize", || {
        materialize_split_with(dataset, plan, split, cfg.truth_policy)
    })?;
    let histories = mat.train_histories();

    let mut model = factory.build(&mat)?;
    let mut budget = TrainBudget::new(cfg.budget);
    timings.time("train", || {
        train(
            &mut model,
            FitContext {
                run_id,
                seed: cfg.seed,
                k: cfg.k,
                train_events: &mat.train_events,
                val_truth: &mat.val_truth,
                setting: &cfg.setting,
                budget_remaining: budget.remaining(),
            },
            &mut budget,
        )
    })?;

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
    let preds: Vec<RankedList> = timings
        .time("predict", || recommend_batch(&model, &queries, cfg.k))
        .map_err(with_run)?;

    let standard = timings.time("standard", || {
        evaluate_standard(&preds, &truths, cfg.k, dataset.items().len())
    })?;
    let mut results = vec![
        TestResult::new(test_ids::HR, run_id, standard.hr_at_k),
        TestResult::new(test_ids::MRR, run_id, standard.mrr_at_k),
        TestResult::new(test_ids::NDCG, run_id, standard.ndcg_at_k),
        TestResult::new(test_ids::MAP, run_id, standard.map_at_k),
        TestResult::new(test_ids::COVERAGE, run_id, standard.coverage),
    ];

    let ctx = SliceContext {
        dataset,
        train_events: &mat.train_events,
        cold_start_users: &mat.cold_start_users,
    };
    let slices: Vec<SliceReport> = timings.time("slices", || {
        SliceKind::ALL
            .iter()
            .map(|&kind| {
                let spec = SliceSpec {
                    kind,
                    n_buckets: cfg.slice_buckets,
                    support_floor: cfg.support_floor,
                };
                slice_evaluate(&preds, &truths, &ctx, &spec, cfg.k)
            })
            .collect::<Result<_>>()
    })?;
    let by_kind = |kind: SliceKind| {
        slices
            .iter()
            .find(|s| s.kind == kind)
            .expect("all kinds evaluated")
    };
    results.push(TestResult::new(
        test_ids::SLICE_COUNTRY,
        run_id,
        slice_value(by_kind(SliceKind::UserCountry)),
    ));
    results.push(TestResult::new(
        test_ids::SLICE_GENDER,
        run_id,
        slice_value(by_kind(SliceKind::UserGender)),
    ));
    results.push(TestResult::new(
        test_ids::SLICE_ACTIVITY,
        run_id,
        slice_value(by_kind(SliceKind::UserActivity)),
    ));
    results.push(TestResult::new(
        test_ids::SLICE_POPULARITY,
        run_id,
        slice_value(by_kind(SliceKind::ItemPopularity)),
    ));
    // No cold-start users in this run: the slice coincides with nobody, so
    // the population hit rate stands in.
    let cold_hr = by_kind(SliceKind::ColdStart)
        .group_hr("cold")
        .unwrap_or(standard.hr_at_k);
    results.push(TestResult::new(test_ids::SLICE_COLD_START, run_id, cold_hr));

    let index = PerturbationIndex::new(dataset.items().values(), &mat.train_events);
    let spec = PerturbationSpec::new(
        cfg.perturbation_sample,
        derive_seed(cfg.seed, &format!("perturb/{run_id}")),
    )?;
    let candidates = mat.test_truth.keys().cloned().collect();
    let sampled = sample_users(&candidates, spec.n_sample_users, spec.seed);
    let stability = timings
        .time("behavioral", || {
            stability_test(&model, &sampled, &histories, &index, &spec, cfg.k)
        })
        .map_err(with_run)?;
    let error = timings.time("behavioral", || {
        error_distance_test(&preds, &truths, dataset.items(), cfg.k)
    })?;
    results.push(TestResult::new(
        test_ids::STABILITY,
        run_id,
        stability.mean_jaccard,
    ));
    results.push(TestResult::new(
        test_ids::ERROR_QUALITY,
        run_id,
        error.quality,
    ));

    let mut per_user = BTreeMap::new();
    if cfg.per_user_values {
        let scores = per_user_scores(&preds, &truths, cfg.k)?;
        per_user.insert(
            test_ids::HR.to_owned(),
            scores.values().map(|s| s.hr).collect(),
        );
        per_user.insert(
            test_ids::MRR.to_owned(),
            scores.values().map(|s| s.mrr).collect(),
        );
        per_user.insert(
            test_ids::NDCG.to_owned(),
            scores.values().map(|s| s.ndcg).collect(),
        );
        per_user.insert(
            test_ids::MAP.to_owned(),
            scores.values().map(|s| s.map).collect(),
        );
        per_user.insert(
            test_ids::STABILITY.to_owned(),
            stability.per_user.values().copied().collect(),
        );
        per_user.insert(
            test_ids::ERROR_QUALITY.to_owned(),
            error.per_user.values().map(|d| 1.0 - d).collect(),
        );
    }

    Ok(RunOutcome {
        record: RunRecord {
            run_id,
            split: split.clone(),
            n_train_events: mat.train_events.len(),
            n_test_users: truths.len(),
            n_cold_start_users: mat.cold_start_users.len(),
            slices,
        },
        results,
        per_user,
        timings,
    })
}

fn host_name() -> String {
    std::env::var("HOSTNAME")
        .ok()
        .or_else(|| std::fs::read_to_string("/etc/hostname").ok())
        .map(|h| h.trim().to_owned())
        .unwrap_or_default()
}

/// Runs the whole rotation and returns the report plus the fold plan used.
pub fn run_evaluation(
    dataset: &Dataset,
    cfg: &EvalConfig,
    factory: &dyn ModelFactory,
) -> Result<(RunReport, FoldPlan)> {
    cfg.validate()?;
    let started = SystemTime::now();
    let total = Instant::now();
    let plan = partition(dataset, cfg.folds, cfg.seed)?;
    let schedule = rotation_schedule(cfg.folds)?;

    let outcomes: Vec<RunOutcome> = if cfg.parallel_runs && factory.parallel_safe() {
        schedule
            .par_iter()
            .map(|split| evaluate_run(dataset, &plan, split, cfg, factory))
            .collect::<Result<_>>()?
    } else {
        schedule
            .iter()
            .map(|split| evaluate_run(dataset, &plan, split, cfg, factory))
            .collect::<Result<_>>()?
    };

    let mut results = Vec::new();
    let mut runs = Vec::new();
    let mut per_user: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut wall: BTreeMap<String, f64> = BTreeMap::new();
    for outcome in outcomes {
        results.extend(outcome.results);
        runs.push(outcome.record);
        for (test, values) in outcome.per_user {
            per_user.entry(test).or_default().extend(values);
        }
        for (phase, d) in outcome.timings.0 {
            *wall.entry(phase.to_owned()).or_default() += d.as_secs_f64();
        }
    }
    let final_score = aggregate(&results, &cfg.included_tests)?;
    wall.insert("total".into(), total.elapsed().as_secs_f64());

    let report = RunReport {
        harness_version: HARNESS_VERSION.to_owned(),
        dataset_digest: dataset.digest(),
        model: factory.model_name(),
        fold_seed: cfg.seed,
        folds: cfg.folds,
        k: cfg.k,
        config: cfg.settings_block(),
        included_tests: cfg.included_tests.iter().cloned().collect(),
        results,
        runs,
        per_user: cfg.per_user_values.then_some(per_user),
        final_score,
        meta: ReportMeta {
            started_at_unix: started
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            host: host_name(),
            wall_clock_secs: wall,
        },
    };
    Ok((report, plan))
}

impl<F> ModelFactory for F
where
    F: Fn(&SplitMaterialization) -> Result<ModelHandle> + Sync,
{
    fn build(&self, split: &SplitMaterialization) -> Result<ModelHandle> {
        self(split)
    }

    fn model_name(&self) -> String {
        "custom".into()
    }
}
