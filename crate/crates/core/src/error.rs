use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("label {label} out of range for {num_classes} classes")]
    Label { label: usize, num_classes: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("cache dataset is not class-balanced (per-class counts: {counts:?})")]
    Imbalanced { counts: Vec<usize> },

    #[error("infeasible partition: {0}")]
    Infeasible(String),

    #[error("cannot sample {wanted} clients: only {available} hold data")]
    Sampling { wanted: usize, available: usize },

    #[error("client {0} has an empty shard and cannot train")]
    EmptyShard(usize),

    #[error("aggregation failed: {0}")]
    Aggregation(String),

    #[error("divergence at step {step} (gap {gap:e}): check {precondition}")]
    Divergence {
        step: usize,
        gap: f64,
        precondition: String,
    },

    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
