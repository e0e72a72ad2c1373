//! File-exchange binding for models that run as a separate process.
//!
//! For every batch of queries the harness prepares a request directory:
//!
//! ```text
//! request_dir/
//!   request.json      {"k", "run_id", "seed", "phase": "fit_predict", "budget_remaining"}
//!   train.tsv         events.tsv format
//!   test_users.tsv    header `user_id`, one user per line
//!   val_truth.tsv     header `user_id\titem_id` (validation fold, optional to use)
//! ```
//!
//! The model command is run with the directory path as its last argument
//! and must write `predictions.tsv` (`user_id`, `rank`, `item_id`, ranks
//! 1-based) before exiting with status 0.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::datamodel::{write_events, InteractionEvent, ItemId, UserId};
use crate::error::{Error, Result};
use crate::folds::Truths;
use crate::metrics::RankedList;
use crate::model::{FitContext, Query, Recommender};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);
pub const PHASE_FIT_PREDICT: &str = "fit_predict";
pub const PREDICTIONS_HEADER: [&str; 3] = ["user_id", "rank", "item_id"];

const POLL_INTERVAL: Duration = Duration::from_millis(10);
const DIAGNOSTIC_TAIL: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestManifest {
    pub k: usize,
    pub run_id: usize,
    pub seed: u64,
    pub phase: String,
    pub budget_remaining: usize,
}

/// Program plus leading arguments; the request directory is appended.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalCommand {
    pub program: String,
    pub args: Vec<String>,
    pub working_dir: Option<PathBuf>,
    pub timeout: Duration,
}

impl ExternalCommand {
    pub fn new(program: impl Into<String>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            working_dir: None,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    /// Splits a command line on whitespace.
    pub fn parse(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace().map(str::to_owned);
        let program = parts
            .next()
            .ok_or_else(|| Error::InvalidParameter("empty external model command".into()))?;
        Ok(Self {
            args: parts.collect(),
            ..Self::new(program)
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_working_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.working_dir = Some(dir.into());
        self
    }

    pub fn command_line(&self) -> Vec<String> {
        std::iter::once(self.program.clone())
            .chain(self.args.iter().cloned())
            .collect()
    }
}

fn write_lines(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let file =
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Writes `request.json`, `train.tsv`, `test_users.tsv` and `val_truth.tsv`.
pub fn write_request(
    request_dir: &Path,
    manifest: &RequestManifest,
    train_events: &[InteractionEvent],
    test_users: &[UserId],
    val_truth: &Truths,
) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)?;
    let manifest_path = request_dir.join("request.json");
    std::fs::write(&manifest_path, json)
        .map_err(|e| Error::io(format!("writing {}", manifest_path.display()), e))?;
    write_lines(&request_dir.join("train.tsv"), |w| {
        write_events(w, train_events)
    })?;
    write_lines(&request_dir.join("test_users.tsv"), |w| {
        writeln!(w, "user_id")?;
        for u in test_users {
            writeln!(w, "{u}")?;
        }
        Ok(())
    })?;
    write_lines(&request_dir.join("val_truth.tsv"), |w| {
        writeln!(w, "user_id\titem_id")?;
        for (u, items) in val_truth {
            for i in items {
                writeln!(w, "{u}\t{i}")?;
            }
        }
        Ok(())
    })
}

/// Serializes lists in the `predictions.tsv` format.
pub fn write_predictions(w: &mut dyn Write, lists: &[RankedList]) -> std::io::Result<()> {
    writeln!(w, "{}", PREDICTIONS_HEADER.join("\t"))?;
    for list in lists {
        for (rank, item) in list.items.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}", list.user_id, rank + 1, item)?;
        }
    }
    Ok(())
}

/// Parses `predictions.tsv` and checks it answers exactly the requested
/// users with duplicate-free lists of at most `k` items and contiguous ranks.
pub fn parse_predictions(
    body: &str,
    expected_users: &[UserId],
    k: usize,
) -> Result<BTreeMap<UserId, RankedList>> {
    let bad = |msg: String| Error::MalformedPredictions(msg);
    let mut lines = body.lines().enumerate();
    match lines.next() {
        Some((_, header))
            if header
                .trim_end_matches('\r')
                .split('\t')
                .eq(PREDICTIONS_HEADER) => {}
        _ => {
            return Err(bad(format!(
                "missing header {:?}",
                PREDICTIONS_HEADER.join("\t")
            )))
        }
    }
    let expected: HashSet<&UserId> = expected_users.iter().collect();
    let mut ranked: BTreeMap<UserId, BTreeMap<usize, ItemId>> = BTreeMap::new();
    for (idx, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields[0].is_empty() || fields[2].is_empty() {
            return Err(bad(format!(
                "line {lineno}: expected user_id, rank, item_id"
            )));
        }
        let user = UserId::from(fields[0]);
        if !expected.contains(&user) {
            return Err(bad(format!(
                "line {lineno}: user {:?} was not requested",
                fields[0]
            )));
        }
        let rank: usize = fields[1].parse().ok().filter(|&r| r >= 1).ok_or_else(|| {
            bad(format!(
                "line {lineno}: rank {:?} is not a positive integer",
                fields[1]
            ))
        })?;
        if ranked
            .entry(user)
            .or_default()
            .insert(rank, fields[2].into())
            .is_some()
        {
            return Err(bad(format!(
                "line {lineno}: rank {rank} repeated for user {:?}",
                fields[0]
            )));
        }
    }

    let mut out = BTreeMap::new();
    for user in expected_users {
        let Some(by_rank) = ranked.remove(user) else {
            return Err(bad(format!(
                "no predictions for requested user {:?}",
                user.0
            )));
        };
        if by_rank.len() > k {
            return Err(bad(format!(
                "user {:?} has {} items, more than k={k}",
                user.0,
                by_rank.len()
            )));
        }
        if by_rank.keys().copied().ne(1..=by_rank.len()) {
            return Err(bad(format!("ranks for user {:?} are not 1..n", user.0)));
        }
        let items: Vec<ItemId> = by_rank.into_values().collect();
        let list = RankedList {
            user_id: user.clone(),
            items,
        };
        if list.has_duplicates() {
            return Err(bad(format!("duplicate items for user {:?}", user.0)));
        }
        out.insert(user.clone(), list);
    }
    Ok(out)
}

fn tail(path: &Path) -> String {
    let body = std::fs::read(path).unwrap_or_default();
    let start = body.len().saturating_sub(DIAGNOSTIC_TAIL);
    String::from_utf8_lossy(&body[start..]).trim().to_owned()
}

fn diagnostics(request_dir: &Path) -> String {
    let stderr = tail(&request_dir.join("stderr.log"));
    let stdout = tail(&request_dir.join("stdout.log"));
    match (stderr.is_empty(), stdout.is_empty()) {
        (true, true) => "(no output)".into(),
        (false, true) => format!("stderr: {stderr}"),
        (true, false) => format!("stdout: {stdout}"),
        (false, false) => format!("stderr: {stderr}; stdout: {stdout}"),
    }
}

/// Runs the model process on a prepared request directory and returns its
/// validated predictions.
pub fn run_external(
    command: &ExternalCommand,
    request_dir: &Path,
    expected_users: &[UserId],
    k: usize,
) -> Result<BTreeMap<UserId, RankedList>> {
    for required in ["train.tsv", "test_users.tsv", "request.json"] {
        if !request_dir.join(required).is_file() {
            return Err(Error::InvalidParameter(format!(
                "request directory {} lacks {required}",
                request_dir.display()
            )));
        }
    }
    let predictions = request_dir.join("predictions.tsv");
    let _ = std::fs::remove_file(&predictions);
    let log = |name: &str| {
        let path = request_dir.join(name);
        File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
    };

    let mut cmd = Command::new(&command.program);
    cmd.args(&command.args)
        .arg(request_dir)
        .stdin(Stdio::null())
        .stdout(log("stdout.log")?)
        .stderr(log("stderr.log")?);
    if let Some(dir) = &command.working_dir {
        cmd.current_dir(dir);
    }
    let mut child = cmd.spawn().map_err(|e| Error::ExternalModelFailure {
        status: "spawn failed".into(),
        diagnostics: format!("{}: {e}", command.program),
    })?;

    let started = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if started.elapsed() >= command.timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Timeout {
                    limit_secs: command.timeout.as_secs(),
                    diagnostics: diagnostics(request_dir),
                });
            }
            Ok(None) => std::thread::sleep(POLL_INTERVAL),
            Err(e) => return Err(Error::io("waiting for external model", e)),
        }
    };
    if !status.success() {
        return Err(Error::ExternalModelFailure {
            status: status.to_string(),
            diagnostics: diagnostics(request_dir),
        });
    }
    let body = std::fs::read_to_string(&predictions)
        .map_err(|_| Error::MalformedPredictions("predictions.tsv was not written".into()))?;
    parse_predictions(&body, expected_users, k)
}

/// A [`Recommender`] backed by an external process.
///
/// Fitting only records the run context; the process trains and predicts in
/// one invocation per query batch. When a query's history differs from the
/// user's training events (behavioral perturbations), the user's events in
/// `train.tsv` are rewritten to match the history before the call.
#[derive(Debug)]
pub struct ExternalModel {
    name: String,
    command: ExternalCommand,
    scratch: Option<PathBuf>,
    state: Option<FitState>,
}

#[derive(Debug)]
struct FitState {
    manifest: RequestManifest,
    train_events: Vec<InteractionEvent>,
    val_truth: Truths,
}

impl ExternalModel {
    pub fn new(command: ExternalCommand) -> Self {
        Self {
            name: format!("external:{}", command.command_line().join(" ")),
            command,
            scratch: None,
            state: None,
        }
    }

    /// Creates request directories under `dir` instead of the system temp dir.
    pub fn with_scratch_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.scratch = Some(dir.into());
        self
    }

    pub fn command(&self) -> &ExternalCommand {
        &self.command
    }

    fn events_for(&self, state: &FitState, queries: &[Query]) -> Vec<InteractionEvent> {
        let mut by_user: HashMap<&UserId, Vec<&InteractionEvent>> = HashMap::new();
        for e in &state.train_events {
            by_user.entry(&e.user_id).or_default().push(e);
        }
        let mut rewritten: HashMap<&UserId, Vec<InteractionEvent>> = HashMap::new();
        for q in queries {
            let current = by_user.get(&q.user_id).cloned().unwrap_or_default();
            if current.iter().map(|e| &e.item_id).eq(q.history.iter()) {
                continue;
            }
            let events = if current.len() == q.history.len() {
                current
                    .iter()
                    .zip(&q.history)
                    .map(|(e, item)| InteractionEvent {
                        item_id: item.clone(),
                        ..(*e).clone()
                    })
                    .collect()
            } else {
                q.history
                    .iter()
                    .enumerate()
                    .map(|(t, item)| {
                        InteractionEvent::new(q.user_id.clone(), item.clone(), t as u64)
                    })
                    .collect()
            };
            rewritten.insert(&q.user_id, events);
        }
        if rewritten.is_empty() {
            return state.train_events.clone();
        }
        let mut out: Vec<InteractionEvent> = state
            .train_events
            .iter()
            .filter(|e| !rewritten.contains_key(&e.user_id))
            .cloned()
            .collect();
        out.extend(rewritten.into_values().flatten());
        out.sort();
        out
    }
}

impl Recommender for ExternalModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn fit(&mut self, ctx: &FitContext<'_>) -> Result<()> {
        self.state = Some(FitState {
            manifest: RequestManifest {
                k: ctx.k,
                run_id: ctx.run_id,
                seed: ctx.seed,
                phase: PHASE_FIT_PREDICT.into(),
                budget_remaining: ctx.budget_remaining,
            },
            train_events: ctx.train_events.to_vec(),
            val_truth: ctx.val_truth.clone(),
        });
        Ok(())
    }

    fn recommend(&self, user: &UserId, history: &[ItemId], k: usize) -> Result<RankedList> {
        let query = Query {
            user_id: user.clone(),
            history: history.to_vec(),
        };
        Ok(self.recommend_batch(&[query], k)?.remove(0))
    }

    fn recommend_batch(&self, queries: &[Query], k: usize) -> Result<Vec<RankedList>> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::ModelQueryFailure {
                user: String::new(),
                reason: "external model queried before fit".into(),
            })?;
        let users: Vec<UserId> = queries
            .iter()
            .map(|q| q.user_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let dir = match &self.scratch {
            Some(root) => tempfile::Builder::new().prefix("request-").tempdir_in(root),
            None => tempfile::Builder::new()
                .prefix("recbench-request-")
                .tempdir(),
        }
        .map_err(|e| Error::io("creating request directory", e))?;
        let manifest = RequestManifest {
            k,
            ..state.manifest.clone()
        };
        write_request(
            dir.path(),
            &manifest,
            &self.events_for(state, queries),
            &users,
            &state.val_truth,
        )?;
        let mut answers = run_external(&self.command, dir.path(), &users, k)?;
        Ok(queries
            .iter()
            .map(|q| {
                answers
                    .remove(&q.user_id)
                    .unwrap_or_else(|| RankedList::empty(q.user_id.clone()))
            })
            .collect())
    }
}
