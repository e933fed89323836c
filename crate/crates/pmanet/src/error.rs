//! Crate-wide error type.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("non-finite value produced by {op} (first offending index {index})")]
    NonFiniteValue { op: &'static str, index: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),

    #[error("training corpus is empty")]
    EmptyCorpus,

    #[error("vocab size {requested} is below the minimum of {minimum}")]
    VocabTooSmall { requested: usize, minimum: usize },

    #[error("input is empty after whitespace strip")]
    EmptyInput,

    #[error("unknown token id {0}")]
    UnknownId(usize),

    #[error("id {id} out of range for table of {size} rows")]
    IdOutOfRange { id: usize, size: usize },

    #[error("token span is empty")]
    EmptySpan,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("column {0:?} not found in input file")]
    MissingColumn(String),

    #[error("unknown label {0:?} (not in schema map)")]
    UnknownLabel(String),

    #[error("input file {0:?} contains no usable rows")]
    EmptyFile(String),

    #[error("split fractions sum to {0}, which exceeds 1")]
    FractionOverflow(f64),

    #[error("dataset is empty")]
    DataEmpty,

    #[error("training diverged: loss became non-finite at step {step}")]
    DivergenceDetected { step: usize },

    #[error("pyramid level {level} invalid for axis of length {axis_len}")]
    InvalidLevel { level: usize, axis_len: usize },

    #[error("url has no parseable host: {0:?}")]
    NoHost(String),

    #[error("host {0:?} does not split into multiple subwords")]
    Unsplittable(String),

    #[error("no eligible insertion boundaries")]
    NoBoundaries,

    #[error("source set too small: need {needed} {kind} records, have {available}")]
    InsufficientSource {
        kind: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("bad vocab file: {0}")]
    BadVocabFile(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for usage/input problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteValue { .. }
            | Error::NotScalarLoss(_)
            | Error::DivergenceDetected { .. } => 3,
            _ => 2,
        }
    }
}
