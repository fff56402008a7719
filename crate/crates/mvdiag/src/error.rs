//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("no messages parsed yet")]
    EmptyState,

    #[error("insufficient data for series {0} ({1} samples, need >= 2)")]
    InsufficientData(String, usize),

    #[error("no baseline for series {0}")]
    UnknownSeries(String),

    #[error("no parented spans to form invocation pairs")]
    NoInvocationPairs,

    #[error("no spans in window, cannot derive a graph")]
    EmptyTraces,

    #[error("empty alert corpus")]
    EmptyCorpus,

    #[error("root cause instance {0} not present in the window graph")]
    RootCauseNotInGraph(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("batch too small for contrastive terms (n = {0}, need >= 2)")]
    BatchTooSmall(usize),

    #[error("label {0} out of range (C = {1})")]
    LabelOutOfRange(usize, usize),

    #[error("root index {0} invalid for sample with {1} nodes")]
    RootIndexInvalid(usize, usize),

    #[error("training dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss on batch {0}")]
    NonFiniteLoss(usize),

    #[error("checkpoint/extractor config mismatch: {0}")]
    ChecksumMismatch(String),

    #[error("denominator loss below 1e-12, affinity undefined")]
    ZeroLoss,

    #[error("fault target {0} not present in topology")]
    FaultTargetUnknown(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
