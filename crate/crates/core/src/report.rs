//! The evaluation record and its canonical JSON form.
//!
//! Canonical JSON has sorted object keys, two-space indentation and every
//! floating-point number written with 17 significant digits in exponent
//! form, so equal reports serialize to identical bytes. Run-dependent
//! metadata (timestamps, host, wall-clock timings) lives under `"meta"` and
//! is left out of byte-level comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::folds::RunSplit;
use crate::slices::SliceReport;

pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One test's value in one run. Higher is better; always within `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test_id: String,
    pub run_id: usize,
    pub value: f64,
}

impl TestResult {
    pub fn new(test_id: impl Into<String>, run_id: usize, value: f64) -> Self {
        Self {
            test_id: test_id.into(),
            run_id,
            value,
        }
    }
}

/// Per-run detail kept alongside the test values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub split: RunSplit,
    pub n_train_events: usize,
    pub n_test_users: usize,
    pub n_cold_start_users: usize,
    pub slices: Vec<SliceReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub started_at_unix: u64,
    pub host: String,
    /// Wall-clock seconds per phase, summed over runs.
    pub wall_clock_secs: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub harness_version: String,
    pub dataset_digest: String,
    pub model: String,
    pub fold_seed: u64,
    pub folds: usize,
    pub k: usize,
    /// Free-form evaluation settings, recorded for reproduction.
    pub config: BTreeMap<String, Value>,
    pub included_tests: Vec<String>,
    pub results: Vec<TestResult>,
    pub runs: Vec<RunRecord>,
    /// Pooled per-user values of user-level tests, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_user: Option<BTreeMap<String, Vec<f64>>>,
    pub final_score: f64,
    pub meta: ReportMeta,
}

impl RunReport {
    /// Values of one test keyed by run.
    pub fn test_values(&self, test_id: &str) -> BTreeMap<usize, f64> {
        self.results
            .iter()
            .filter(|r| r.test_id == test_id)
            .map(|r| (r.run_id, r.value))
            .collect()
    }

    pub fn to_canonical_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    /// Canonical JSON with the `"meta"` block removed.
    pub fn content_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Value::Object(map) = &mut value {
            map.remove("meta");
        }
        Ok(canonical_value(&value))
    }

    pub fn from_json_str(body: &str) -> Result<Self> {
        serde_json::from_str(body).map_err(|e| parse_error("run report", body, &e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json_str(&body).map_err(|e| match e {
            Error::Parse { offset, reason, .. } => Error::Parse {
                what: path.display().to_string(),
                offset,
                reason,
            },
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let body = self.to_canonical_json()?;
        std::fs::write(path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Converts a serde_json error position (line, column) into a byte offset.
pub(crate) fn parse_error(what: &str, body: &str, err: &serde_json::Error) -> Error {
    let line = err.line().max(1);
    let line_start: usize = body
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    let offset = (line_start + err.column().saturating_sub(1)).min(body.len());
    Error::Parse {
        what: what.to_owned(),
        offset,
        reason: err.to_string(),
    }
}

pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(canonical_value(&serde_json::to_value(value)?))
}

fn canonical_value(value: &Value) -> String {
    let mut out = String::new();
    emit(&mut out, value, 0);
    out.push('\n');
    out
}

fn format_number(n: &serde_json::Number) -> String {
    if n.is_f64() {
        let f = n.as_f64().expect("is_f64");
        format!("{f:.16e}")
    } else {
        n.to_string()
    }
}

fn emit(out: &mut String, value: &Value, depth: usize) {
    let pad = |out: &mut String, d: usize| {
        for _ in 0..d {
            out.push_str("  ");
        }
    };
    match value {
        Value::Null | Value::Bool(_) | Value::String(_) => {
            out.push_str(&value.to_string());
        }
        Value::Number(n) => out.push_str(&format_number(n)),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                pad(out, depth + 1);
                emit(out, item, depth + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, key) in keys.iter().enumerate() {
                pad(out, depth + 1);
                let _ = write!(out, "{}: ", Value::String((*key).clone()));
                emit(out, &map[*key], depth + 1);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push('}');
        }
    }
}
