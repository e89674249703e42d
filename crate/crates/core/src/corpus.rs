//! Task corpus: one JSON object per line with the fields of [`TaskRecord`].

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::sandbox::{is_assert, TestCase, Tier};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: invalid JSON: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: field `{field}`: {message}")]
    SchemaError {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub description: String,
    pub error_code: String,
    pub test_list: Vec<String>,
    pub challenge_test_list: Vec<String>,
}

impl TaskRecord {
    /// Basic cases first, then challenge cases, in file order.
    pub fn cases(&self) -> Vec<TestCase> {
        self.basic_cases()
            .into_iter()
            .chain(self.challenge_cases())
            .collect()
    }

    pub fn basic_cases(&self) -> Vec<TestCase> {
        self.test_list
            .iter()
            .map(|e| TestCase {
                expression: e.clone(),
                tier: Tier::Basic,
            })
            .collect()
    }

    pub fn challenge_cases(&self) -> Vec<TestCase> {
        self.challenge_test_list
            .iter()
            .map(|e| TestCase {
                expression: e.clone(),
                tier: Tier::Challenge,
            })
            .collect()
    }

    /// Length used for routing, in characters.
    pub fn code_length(&self) -> u64 {
        self.error_code.chars().count() as u64
    }

    /// Checks the record invariants; `line` is only used in the error.
    pub fn validate(&self, line: usize) -> Result<(), CorpusError> {
        let schema = |field, message: &str| CorpusError::SchemaError {
            line,
            field,
            message: message.to_string(),
        };
        if self.task_id.trim().is_empty() {
            return Err(schema("task_id", "must be non-empty"));
        }
        if self.error_code.trim().is_empty() {
            return Err(schema("error_code", "must be non-empty"));
        }
        if self.test_list.is_empty() {
            return Err(schema("test_list", "must contain at least one assert"));
        }
        if let Some(bad) = self.test_list.iter().find(|t| !is_assert(t)) {
            return Err(schema("test_list", &format!("not an assert statement: {bad}")));
        }
        if let Some(bad) = self.challenge_test_list.iter().find(|t| !is_assert(t)) {
            return Err(schema(
                "challenge_test_list",
                &format!("not an assert statement: {bad}"),
            ));
        }
        Ok(())
    }
}

fn field<'a>(
    obj: &'a serde_json::Map<String, Value>,
    name: &'static str,
    line: usize,
) -> Result<&'a Value, CorpusError> {
    obj.get(name).ok_or(CorpusError::SchemaError {
        line,
        field: name,
        message: "missing".into(),
    })
}

fn string_field(
    obj: &serde_json::Map<String, Value>,
    name: &'static str,
    line: usize,
) -> Result<String, CorpusError> {
    match field(obj, name, line)? {
        Value::String(s) => Ok(s.clone()),
        _ => Err(CorpusError::SchemaError {
            line,
            field: name,
            message: "expected a string".into(),
        }),
    }
}

fn list_field(
    obj: &serde_json::Map<String, Value>,
    name: &'static str,
    line: usize,
) -> Result<Vec<String>, CorpusError> {
    let bad = || CorpusError::SchemaError {
        line,
        field: name,
        message: "expected a list of strings".into(),
    };
    match field(obj, name, line)? {
        Value::Array(items) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(bad))
            .collect(),
        _ => Err(bad()),
    }
}

/// Parses one corpus line (1-based `line` for diagnostics).
pub fn parse_record(text: &str, line: usize) -> Result<TaskRecord, CorpusError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CorpusError::ParseError {
        line,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or(CorpusError::ParseError {
        line,
        message: "expected a JSON object".into(),
    })?;
    let record = TaskRecord {
        task_id: string_field(obj, "task_id", line)?,
        description: string_field(obj, "description", line)?,
        error_code: string_field(obj, "error_code", line)?,
        test_list: list_field(obj, "test_list", line)?,
        challenge_test_list: list_field(obj, "challenge_test_list", line)?,
    };
    record.validate(line)?;
    Ok(record)
}

/// Parses a whole corpus. Any bad line rejects the entire load.
pub fn parse_corpus(text: &str) -> Result<Vec<TaskRecord>, CorpusError> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let record = parse_record(raw, i + 1)?;
        if !seen.insert(record.task_id.clone()) {
            return Err(CorpusError::SchemaError {
                line: i + 1,
                field: "task_id",
                message: format!("duplicate task id {}", record.task_id),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_corpus(path: &Path) -> Result<Vec<TaskRecord>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_corpus(&text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBin {
    /// Inclusive lower bound.
    pub lower: u64,
    /// Exclusive upper bound.
    pub upper: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthDistribution {
    pub bins: Vec<LengthBin>,
    pub min: u64,
    pub max: u64,
    /// 33rd and 66th nearest-rank percentiles.
    pub thresholds: (u64, u64),
}

impl LengthDistribution {
    /// Thresholds usable for routing, which needs `t1 < t2`.
    pub fn routing_thresholds(&self) -> (u64, u64) {
        let (t1, t2) = self.thresholds;
        (t1, t2.max(t1 + 1))
    }
}

/// Nearest-rank percentile of sorted data: the value at 1-based rank
/// `ceil(pct * n / 100)`.
pub fn nearest_rank(sorted: &[u64], pct: u64) -> u64 {
    let n = sorted.len() as u64;
    let rank = ((pct * n).div_ceil(100)).max(1);
    sorted[(rank - 1) as usize]
}

pub const DEFAULT_BIN_WIDTH: u64 = 100;

pub fn length_distribution(corpus: &[TaskRecord], bin_width: u64) -> Result<LengthDistribution, CorpusError> {
    length_distribution_of(corpus.iter().map(TaskRecord::code_length), bin_width)
}

pub fn length_distribution_of(
    lengths: impl IntoIterator<Item = u64>,
    bin_width: u64,
) -> Result<LengthDistribution, CorpusError> {
    let mut lengths: Vec<u64> = lengths.into_iter().collect();
    if lengths.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    lengths.sort_unstable();
    let width = bin_width.max(1);
    let min = lengths[0];
    let max = *lengths.last().unwrap();
    let bins = (min / width..=max / width)
        .map(|b| LengthBin {
            lower: b * width,
            upper: (b + 1) * width,
            count: lengths.iter().filter(|l| **l / width == b).count() as u64,
        })
        .collect();
    Ok(LengthDistribution {
        bins,
        min,
        max,
        thresholds: (nearest_rank(&lengths, 33), nearest_rank(&lengths, 66)),
    })
}
