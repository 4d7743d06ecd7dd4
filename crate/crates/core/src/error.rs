use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward already ran on this tape; record a new forward pass first")]
    BackwardTwice,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input data: {0}")]
    Data(String),

    #[error("too many malformed records: {malformed} of {total} exceed tolerance {tolerance}")]
    Malformed {
        malformed: usize,
        total: usize,
        tolerance: f64,
    },

    #[error("filtering left an empty corpus (sessions before={sessions_before}, items before={items_before}, min_len={min_len}, min_item_count={min_item_count})")]
    EmptyCorpus {
        sessions_before: usize,
        items_before: usize,
        min_len: usize,
        min_item_count: usize,
    },

    #[error("unknown item id {0:?}")]
    UnknownItem(String),

    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Errors caused by bad user input or configuration rather than a bug or
    /// a numerical failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Config(_)
                | Error::Data(_)
                | Error::Malformed { .. }
                | Error::EmptyCorpus { .. }
                | Error::UnknownItem(_)
                | Error::Mismatch(_)
                | Error::Checkpoint(_)
                | Error::Json(_)
        )
    }
}
