//! Canonical data model and file I/O for metrics, traces, and logs.
//!
//! All three modalities share one clock: integer milliseconds since the Unix
//! epoch (UTC). Records are exchanged as JSONL, one record per line.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One metric observation on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    #[serde(rename = "instance")]
    pub instance_id: String,
    #[serde(rename = "metric")]
    pub metric_name: String,
    pub ts: i64,
    pub value: f64,
}

/// One service invocation record. Root spans have no parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub trace_id: String,
    pub span_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_span_id: Option<String>,
    pub service: String,
    #[serde(rename = "instance")]
    pub instance_id: String,
    pub operation: String,
    pub start_ts: i64,
    pub duration_ms: i64,
    pub status: String,
}

impl Span {
    /// End timestamp, derived from start + duration.
    pub fn end_ts(&self) -> i64 {
        self.start_ts + self.duration_ms
    }
}

/// Log severity. Unrecognized levels are preserved verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum LogLevel {
    Info,
    Warn,
    Error,
    Debug,
    Other(String),
}

impl From<String> for LogLevel {
    fn from(s: String) -> Self {
        match s.as_str() {
            "INFO" => LogLevel::Info,
            "WARN" => LogLevel::Warn,
            "ERROR" => LogLevel::Error,
            "DEBUG" => LogLevel::Debug,
            _ => LogLevel::Other(s),
        }
    }
}

impl From<LogLevel> for String {
    fn from(l: LogLevel) -> String {
        l.to_string()
    }
}

impl fmt::Display for LogLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogLevel::Info => write!(f, "INFO"),
            LogLevel::Warn => write!(f, "WARN"),
            LogLevel::Error => write!(f, "ERROR"),
            LogLevel::Debug => write!(f, "DEBUG"),
            LogLevel::Other(s) => write!(f, "{s}"),
        }
    }
}

/// One log line emitted by an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    #[serde(rename = "instance")]
    pub instance_id: String,
    pub ts: i64,
    pub level: LogLevel,
    pub message: String,
}

/// Half-open window `[start_ts, end_ts)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_ts: i64,
    pub end_ts: i64,
}

impl TimeWindow {
    pub fn new(start_ts: i64, end_ts: i64) -> Result<Self> {
        if start_ts >= end_ts {
            return Err(Error::Config(format!(
                "window start {start_ts} must precede end {end_ts}"
            )));
        }
        Ok(TimeWindow { start_ts, end_ts })
    }

    pub fn contains(&self, ts: i64) -> bool {
        self.start_ts <= ts && ts < self.end_ts
    }
}

/// Ground-truth label for one injected failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub inject_ts: i64,
    #[serde(rename = "root_cause")]
    pub root_cause_instance: String,
    pub failure_type: String,
}

/// Anything that carries a single timestamp usable for window slicing.
pub trait Timestamped {
    fn timestamp(&self) -> i64;
}

impl Timestamped for MetricSample {
    fn timestamp(&self) -> i64 {
        self.ts
    }
}

impl Timestamped for Span {
    fn timestamp(&self) -> i64 {
        self.start_ts
    }
}

impl Timestamped for LogEntry {
    fn timestamp(&self) -> i64 {
        self.ts
    }
}

impl Timestamped for FailureRecord {
    fn timestamp(&self) -> i64 {
        self.inject_ts
    }
}

fn validate_metric(m: &MetricSample) -> std::result::Result<(), String> {
    if m.ts < 0 {
        return Err("timestamp must be >= 0".into());
    }
    if m.metric_name.is_empty() {
        return Err("metric name must be nonempty".into());
    }
    if !m.value.is_finite() {
        return Err("value must be finite".into());
    }
    Ok(())
}

fn validate_span(s: &Span) -> std::result::Result<(), String> {
    if s.duration_ms < 0 {
        return Err("duration must be >= 0".into());
    }
    Ok(())
}

fn validate_log(l: &LogEntry) -> std::result::Result<(), String> {
    if l.message.is_empty() {
        return Err("message must be nonempty".into());
    }
    Ok(())
}

fn load_jsonl<T, F>(path: &Path, validate: F) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    F: Fn(&T) -> std::result::Result<(), String>,
{
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        validate(&record).map_err(|reason| Error::MalformedRecord {
            line: idx + 1,
            reason,
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricSample>> {
    load_jsonl(path.as_ref(), validate_metric)
}

pub fn load_spans(path: impl AsRef<Path>) -> Result<Vec<Span>> {
    load_jsonl(path.as_ref(), validate_span)
}

pub fn load_logs(path: impl AsRef<Path>) -> Result<Vec<LogEntry>> {
    load_jsonl(path.as_ref(), validate_log)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<FailureRecord>> {
    load_jsonl(path.as_ref(), |_| Ok(()))
}

/// Writes records as JSONL, one per line, in sequence order.
pub fn save_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Keeps exactly the records with `start_ts <= t < end_ts`, order preserved.
pub fn slice<T: Timestamped + Clone>(records: &[T], window: TimeWindow) -> Vec<T> {
    records
        .iter()
        .filter(|r| window.contains(r.timestamp()))
        .cloned()
        .collect()
}
