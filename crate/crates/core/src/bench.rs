//! Benchmark runs over a corpus and the reports they produce.
//!
//! A run executes one session per task on a bounded worker pool. Each
//! finished task is appended to an optional checkpoint file, so an
//! interrupted run resumes where it stopped. Reports are built from rows
//! sorted by task id and do not depend on completion order.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TaskRecord;
use crate::orchestrator::{Engine, ModelStrategy, SessionEvent};
use crate::policy::{ModelId, RewardLedger};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("checkpoint {path} belongs to a different run: {message}")]
    CheckpointMismatch { path: String, message: String },
    #[error("invalid bench configuration: {0}")]
    Config(String),
}

/// How models are chosen during a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    Fixed { model: ModelId },
    Erl,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Fixed { model } => format!("fixed:{model}"),
            Method::Erl => "e-rl".to_string(),
        }
    }

    pub fn strategy(&self) -> ModelStrategy {
        match self {
            Method::Fixed { model } => ModelStrategy::Fixed { model: model.clone() },
            Method::Erl => ModelStrategy::Erl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub task_id: String,
    pub loops: usize,
    pub elapsed_s: f64,
    pub solved: bool,
    pub models_used: Vec<ModelId>,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_cause: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub method: Method,
    pub max_loops: usize,
    pub corpus_size: usize,
    /// `loop_histogram[k]` counts tasks solved on loop `k + 1`.
    pub loop_histogram: Vec<u64>,
    pub failures: u64,
    pub average_running_time: f64,
    pub accuracy: f64,
    pub cumulative_reward: f64,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn from_rows(method: Method, max_loops: usize, mut rows: Vec<BenchRow>) -> Result<Self, BenchError> {
        if rows.is_empty() {
            return Err(BenchError::EmptyCorpus);
        }
        rows.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        let mut loop_histogram = vec![0u64; max_loops];
        let mut failures = 0u64;
        for row in &rows {
            match row.loops {
                k if row.solved && (1..=max_loops).contains(&k) => loop_histogram[k - 1] += 1,
                _ => failures += 1,
            }
        }
        let n = rows.len();
        let solved: u64 = loop_histogram.iter().sum();
        Ok(BenchReport {
            method,
            max_loops,
            corpus_size: n,
            average_running_time: rows.iter().map(|r| r.elapsed_s).sum::<f64>() / n as f64,
            accuracy: solved as f64 / n as f64,
            cumulative_reward: rows.iter().map(|r| r.reward).sum(),
            loop_histogram,
            failures,
            rows,
        })
    }

    pub fn solved(&self) -> u64 {
        self.loop_histogram.iter().sum()
    }

    pub fn label(&self) -> String {
        self.method.label()
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Aligned text table: one row per report, columns per loop, failures,
/// average running time and accuracy.
pub fn render_table(reports: &[BenchReport]) -> String {
    let max_loops = reports.iter().map(|r| r.max_loops).max().unwrap_or(0);
    let mut header: Vec<String> = vec!["Method".into()];
    header.extend((1..=max_loops).map(|k| {
        if k == 1 {
            "1 loop".to_string()
        } else {
            format!("{k} loops")
        }
    }));
    header.extend([
        "Failed".into(),
        "Average running time (s)".into(),
        "Accuracy (%)".into(),
    ]);

    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut cells = vec![r.label()];
            cells.extend((0..max_loops).map(|k| r.loop_histogram.get(k).copied().unwrap_or(0).to_string()));
            cells.push(r.failures.to_string());
            cells.push(format!("{:.1}", r.average_running_time));
            cells.push(format!("{:.2}", r.accuracy * 100.0));
            cells
        })
        .collect();

    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap()
        })
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i == 0 {
                let _ = write!(s, "{:<w$}", cell, w = widths[i]);
            } else {
                let _ = write!(s, " | {:>w$}", cell, w = widths[i]);
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(&header);
    out.push('\n');
    out.push_str(&"-".repeat(out.trim_end().len()));
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    checkpoint: String,
    method: Method,
    max_loops: usize,
}

const CHECKPOINT_TAG: &str = "colearn-bench-checkpoint/1";

/// One finished task as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub row: BenchRow,
    pub history: Vec<SessionEvent>,
    pub ledger: Option<RewardLedger>,
}

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    pub workers: usize,
    pub checkpoint: Option<PathBuf>,
    /// Stop after this many newly executed tasks (for interrupt testing).
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub report: BenchReport,
    pub histories: BTreeMap<String, Vec<SessionEvent>>,
    pub ledger: RewardLedger,
    /// True when `stop_after` cut the run short.
    pub partial: bool,
}

fn read_checkpoint(path: &Path, header: &CheckpointHeader) -> Result<Vec<TaskResult>, BenchError> {
    let err = |message: String| BenchError::Checkpoint {
        path: path.display().to_string(),
        message,
    };
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
    let Some(first) = lines.next() else {
        return Ok(Vec::new());
    };
    let found: CheckpointHeader = serde_json::from_str(first).map_err(|e| err(format!("header: {e}")))?;
    if &found != header {
        return Err(BenchError::CheckpointMismatch {
            path: path.display().to_string(),
            message: format!(
                "expected {} with {} loops, found {} with {} loops",
                header.method.label(),
                header.max_loops,
                found.method.label(),
                found.max_loops
            ),
        });
    }
    let mut done = Vec::new();
    while let Some(line) = lines.next() {
        match serde_json::from_str::<TaskResult>(line) {
            Ok(r) => done.push(r),
            // a torn final line from an interrupted write is dropped
            Err(_) if lines.peek().is_none() && !text.ends_with('\n') => break,
            Err(e) => return Err(err(e.to_string())),
        }
    }
    Ok(done)
}

fn execute_task(engine: &Engine, task: &TaskRecord) -> TaskResult {
    match engine.run_session(task) {
        Ok(s) => TaskResult {
            row: BenchRow {
                task_id: task.task_id.clone(),
                loops: s.loop_count,
                elapsed_s: s.cumulative_elapsed_s,
                solved: s.solved(),
                models_used: s.models_used.clone(),
                reward: s.total_reward(),
                failure_cause: s.failure_cause.clone(),
            },
            history: s.history,
            ledger: Some(s.ledger),
        },
        Err(e) => TaskResult {
            row: BenchRow {
                task_id: task.task_id.clone(),
                loops: 0,
                elapsed_s: 0.0,
                solved: false,
                models_used: Vec::new(),
                reward: 0.0,
                failure_cause: Some(e.to_string()),
            },
            history: Vec::new(),
            ledger: None,
        },
    }
}

/// Runs every task of `corpus` under `method`.
pub fn run_bench(
    corpus: &[TaskRecord],
    engine: &Engine,
    method: &Method,
    options: &BenchOptions,
) -> Result<BenchRun, BenchError> {
    if corpus.is_empty() {
        return Err(BenchError::EmptyCorpus);
    }
    let engine = engine
        .with_strategy(method.strategy())
        .map_err(|e| BenchError::Config(e.to_string()))?;
    let max_loops = engine.config().max_loops;
    let header = CheckpointHeader {
        checkpoint: CHECKPOINT_TAG.to_string(),
        method: method.clone(),
        max_loops,
    };

    let mut results: Vec<TaskResult> = Vec::new();
    let mut sink = None;
    if let Some(path) = &options.checkpoint {
        let cp_err = |e: std::io::Error| BenchError::Checkpoint {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let corpus_ids: HashSet<&str> = corpus.iter().map(|t| t.task_id.as_str()).collect();
        results = read_checkpoint(path, &header)?
            .into_iter()
            .filter(|r| corpus_ids.contains(r.row.task_id.as_str()))
            .collect();
        let fresh = !path.exists() || std::fs::metadata(path).map_err(cp_err)?.len() == 0;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(cp_err)?;
        if fresh {
            let mut line = serde_json::to_vec(&header).expect("header serializes");
            line.push(b'\n');
            file.write_all(&line).map_err(cp_err)?;
        } else if !std::fs::read(path).map_err(cp_err)?.ends_with(b"\n") {
            file.write_all(b"\n").map_err(cp_err)?;
        }
        sink = Some(Mutex::new(file));
    }

    let done: HashSet<String> = results.iter().map(|r| r.row.task_id.clone()).collect();
    let pending: Vec<&TaskRecord> = corpus.iter().filter(|t| !done.contains(&t.task_id)).collect();
    let budget = options.stop_after.unwrap_or(usize::MAX).min(pending.len());
    let next = AtomicUsize::new(0);
    let fresh_results = Mutex::new(Vec::with_capacity(budget));
    let write_error = Mutex::new(None);
    let workers = options.workers.max(1).min(budget.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= budget {
                    break;
                }
                let result = execute_task(&engine, pending[i]);
                if let Some(sink) = &sink {
                    let mut line = serde_json::to_vec(&result).expect("task result serializes");
                    line.push(b'\n');
                    let mut file = sink.lock().unwrap();
                    if let Err(e) = file.write_all(&line).and_then(|_| file.flush()) {
                        write_error.lock().unwrap().get_or_insert(e.to_string());
                    }
                }
                fresh_results.lock().unwrap().push(result);
            });
        }
    });
    if let Some(message) = write_error.into_inner().unwrap() {
        return Err(BenchError::Checkpoint {
            path: options
                .checkpoint
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            message,
        });
    }
    results.extend(fresh_results.into_inner().unwrap());
    results.sort_by(|a, b| a.row.task_id.cmp(&b.row.task_id));

    let partial = results.len() < corpus.len();
    let mut ledger = RewardLedger::new(&engine.config().models(), max_loops);
    let mut histories = BTreeMap::new();
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        if let Some(shard) = &r.ledger {
            ledger.merge(shard);
        }
        histories.insert(r.row.task_id.clone(), r.history);
        rows.push(r.row);
    }
    Ok(BenchRun {
        report: BenchReport::from_rows(method.clone(), max_loops, rows)?,
        histories,
        ledger,
        partial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, loops: usize, solved: bool) -> BenchRow {
        BenchRow {
            task_id: id.into(),
            loops,
            elapsed_s: 10.0,
            solved,
            models_used: vec![],
            reward: if solved { 5.0 } else { -3.5 },
            failure_cause: None,
        }
    }

    #[test]
    fn histogram_counts_and_accuracy() {
        let rows = vec![row("c", 1, true), row("a", 1, true), row("b", 2, true)];
        let r = BenchReport::from_rows(Method::Erl, 5, rows).unwrap();
        assert_eq!(r.loop_histogram, vec![2, 1, 0, 0, 0]);
        assert_eq!(r.failures, 0);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.rows[0].task_id, "a");
    }

    #[test]
    fn mass_is_conserved() {
        let rows = vec![row("a", 5, false), row("b", 3, true), row("c", 0, false)];
        let r = BenchReport::from_rows(Method::Erl, 5, rows).unwrap();
        assert_eq!(r.solved() + r.failures, r.corpus_size as u64);
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_rows_rejected() {
        assert!(matches!(
            BenchReport::from_rows(Method::Erl, 5, vec![]),
            Err(BenchError::EmptyCorpus)
        ));
    }

    #[test]
    fn table_has_one_line_per_report() {
        let r = BenchReport::from_rows(
            Method::Fixed {
                model: "ernie".into(),
            },
            5,
            vec![row("a", 1, true), row("b", 5, false)],
        )
        .unwrap();
        let table = render_table(&[r]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Method"));
        assert!(lines[0].contains("5 loops"));
        assert!(lines[2].starts_with("fixed:ernie"));
        assert!(lines[2].ends_with("50.00"));
    }

    #[test]
    fn method_labels() {
        assert_eq!(Method::Erl.label(), "e-rl");
        assert_eq!(
            Method::Fixed {
                model: "spark".into()
            }
            .label(),
            "fixed:spark"
        );
    }
}
