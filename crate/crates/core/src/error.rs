use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("event references unknown {kind} {id:?}")]
    DanglingReference { kind: &'static str, id: String },

    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dataset has {events} events, fewer than the {k} folds requested")]
    TooFewEvents { events: usize, k: usize },

    #[error("invalid fold count {0}: at least 3 folds are needed (train, validation, test)")]
    InvalidK(usize),

    #[error("inconsistent split: {0}")]
    InconsistentSplit(String),

    #[error("prediction list for user {preds:?} scored against ground truth of user {truth:?}")]
    UserMismatch { preds: String, truth: String },

    #[error("cutoff k must be at least 1")]
    InvalidCutoff,

    #[error("catalog size must be at least 1")]
    InvalidCatalogSize,

    #[error("training events are empty")]
    EmptyTraining,

    #[error("unknown slice kind {0:?}")]
    UnknownSliceKind(String),

    #[error("cannot perturb an empty history")]
    EmptyHistory,

    #[error("item {0:?} has no replacement candidate in the catalog")]
    NoReplacement(String),

    #[error("model query failed for user {user:?}: {reason}")]
    ModelQueryFailure { user: String, reason: String },

    #[error("unknown item {0:?}")]
    UnknownItem(String),

    #[error("hyperparameter budget of {limit} distinct settings exhausted for this run")]
    BudgetExceeded { limit: usize },

    #[error("external model failed ({status}): {diagnostics}")]
    ExternalModelFailure { status: String, diagnostics: String },

    #[error("malformed predictions: {0}")]
    MalformedPredictions(String),

    #[error("external model exceeded the {limit_secs}s time limit; diagnostics: {diagnostics}")]
    Timeout {
        limit_secs: u64,
        diagnostics: String,
    },

    #[error("missing value for test {test_id:?} in run {run_id}")]
    MissingTestValue { test_id: String, run_id: usize },

    #[error("duplicate value for test {test_id:?} in run {run_id}")]
    DuplicateTestValue { test_id: String, run_id: usize },

    #[error("unknown test id {0:?}")]
    UnknownTest(String),

    #[error("empty input")]
    EmptyInput,

    #[error("incompatible reports: {0}")]
    IncompatibleReports(String),

    #[error("cannot parse {what} at byte offset {offset}: {reason}")]
    Parse {
        what: String,
        offset: usize,
        reason: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
