//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible for an operation; names both shapes.
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// API misuse (unsorted input, unknown node id, loss not on tape, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// CSV header does not match the expected schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Too many malformed rows during ingest.
    #[error("{count} malformed rows exceed threshold {threshold}; first: {first}")]
    TooManyBadRows {
        count: usize,
        threshold: usize,
        first: String,
    },

    /// Metric undefined for the given inputs (e.g. single-class AUC).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Non-finite value where a finite one is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Malformed binary artifact (graph file, checkpoint).
    #[error("bad file format: {0}")]
    Format(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
