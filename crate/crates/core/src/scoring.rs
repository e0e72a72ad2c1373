//! Leaderboard aggregation and bootstrap-based verification of a
//! re-executed evaluation against a submitted one.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::{RunReport, TestResult};
use crate::seeding::derive_seed;

pub const DEFAULT_N_BOOT: usize = 10_000;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Values grouped as test id → run id → value.
pub fn values_by_test(results: &[TestResult]) -> Result<BTreeMap<&str, BTreeMap<usize, f64>>> {
    let mut out: BTreeMap<&str, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in results {
        if out
            .entry(&r.test_id)
            .or_default()
            .insert(r.run_id, r.value)
            .is_some()
        {
            return Err(Error::DuplicateTestValue {
                test_id: r.test_id.clone(),
                run_id: r.run_id,
            });
        }
    }
    Ok(out)
}

/// Mean over runs per test, then the unweighted mean over `included_tests`.
/// Every included test must have a value for every run seen in `results`.
pub fn aggregate(results: &[TestResult], included_tests: &BTreeSet<String>) -> Result<f64> {
    if results.is_empty() || included_tests.is_empty() {
        return Err(Error::EmptyInput);
    }
    let by_test = values_by_test(results)?;
    let runs: BTreeSet<usize> = results.iter().map(|r| r.run_id).collect();
    let mut total = 0.0;
    for test in included_tests {
        let values = by_test.get(test.as_str());
        for &run in &runs {
            if values.and_then(|v| v.get(&run)).is_none() {
                return Err(Error::MissingTestValue {
                    test_id: test.clone(),
                    run_id: run,
                });
            }
        }
        let values = values.expect("checked above");
        total += values.values().sum::<f64>() / values.len() as f64;
    }
    Ok(total / included_tests.len() as f64)
}

/// Linear-interpolated empirical quantile of sorted data (`q` in `[0, 1]`).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Percentile bootstrap interval for the mean.
///
/// Each replicate draws `values.len()` values with replacement from its own
/// seeded substream, so the result depends only on `(values, n_boot, alpha,
/// seed)` regardless of threading. The returned interval always contains
/// the sample mean.
pub fn bootstrap_mean_ci(
    values: &[f64],
    n_boot: usize,
    alpha: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if n_boot == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "bootstrap needs n_boot >= 1 and alpha in (0, 1), got {n_boot} and {alpha}"
        )));
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let sum: f64 = (0..n).map(|_| values[rng.gen_range(0..n)]).sum();
            sum / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let sample_mean = mean(values);
    let low = quantile(&means, alpha / 2.0).min(sample_mean);
    let high = quantile(&means, 1.0 - alpha / 2.0).max(sample_mean);
    Ok((low, high))
}

/// What the bootstrap resamples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapUnit {
    /// One value per run of the rotation.
    #[default]
    Run,
    /// Pooled per-user values, for tests that record them; other tests fall
    /// back to run-level values.
    User,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub n_boot: usize,
    pub alpha: f64,
    pub seed: u64,
    pub unit: BootstrapUnit,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            n_boot: DEFAULT_N_BOOT,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            unit: BootstrapUnit::Run,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestVerification {
    pub local_mean: f64,
    pub remote_mean: f64,
    pub local_ci: (f64, f64),
    pub remote_ci: (f64, f64),
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub options: VerifyOptions,
    pub tests: BTreeMap<String, TestVerification>,
    pub overall_pass: bool,
}

fn check_compatible(local: &RunReport, remote: &RunReport) -> Result<()> {
    let mismatch = |what: &str, a: &dyn std::fmt::Debug, b: &dyn std::fmt::Debug| {
        Err(Error::IncompatibleReports(format!(
            "{what} differs: {a:?} vs {b:?}"
        )))
    };
    if local.harness_version != remote.harness_version {
        return mismatch(
            "harness version",
            &local.harness_version,
            &remote.harness_version,
        );
    }
    if local.k != remote.k {
        return mismatch("top-k", &local.k, &remote.k);
    }
    if local.folds != remote.folds {
        return mismatch("fold count", &local.folds, &remote.folds);
    }
    let a: BTreeSet<&String> = local.included_tests.iter().collect();
    let b: BTreeSet<&String> = remote.included_tests.iter().collect();
    if a != b {
        return mismatch("included test set", &a, &b);
    }
    Ok(())
}

fn sample_for(report: &RunReport, test: &str, unit: BootstrapUnit) -> Result<Vec<f64>> {
    if unit == BootstrapUnit::User {
        if let Some(values) = report.per_user.as_ref().and_then(|p| p.get(test)) {
            if !values.is_empty() {
                return Ok(values.clone());
            }
        }
    }
    let values: Vec<f64> = report.test_values(test).into_values().collect();
    if values.is_empty() {
        return Err(Error::IncompatibleReports(format!(
            "report has no values for test {test:?}"
        )));
    }
    Ok(values)
}

/// Compares two reports test by test: a test passes when each side's mean
/// lies inside the other side's bootstrap interval.
pub fn verify(
    local: &RunReport,
    remote: &RunReport,
    opts: &VerifyOptions,
) -> Result<VerificationResult> {
    check_compatible(local, remote)?;
    let mut tests = BTreeMap::new();
    for test in &local.included_tests {
        let seed = derive_seed(opts.seed, test);
        let lv = sample_for(local, test, opts.unit)?;
        let rv = sample_for(remote, test, opts.unit)?;
        let local_ci = bootstrap_mean_ci(&lv, opts.n_boot, opts.alpha, seed)?;
        let remote_ci = bootstrap_mean_ci(&rv, opts.n_boot, opts.alpha, seed)?;
        let (local_mean, remote_mean) = (mean(&lv), mean(&rv));
        let inside = |x: f64, ci: (f64, f64)| ci.0 <= x && x <= ci.1;
        let pass = inside(remote_mean, local_ci) && inside(local_mean, remote_ci);
        tests.insert(
            test.clone(),
            TestVerification {
                local_mean,
                remote_mean,
                local_ci,
                remote_ci,
                pass,
            },
        );
    }
    let overall_pass = tests.values().all(|t| t.pass);
    Ok(VerificationResult {
        options: *opts,
        tests,
        overall_pass,
    })
}
