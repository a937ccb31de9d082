use std::path::PathBuf;

use crate::checkpoint::Checkpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("duplicate token {0:?}")]
    DuplicateToken(String),

    #[error("invalid token {0:?}")]
    InvalidToken(String),

    #[error("row {row} ({token:?}) has zero norm")]
    ZeroNorm { row: usize, token: String },

    #[error("non-finite value in row {row} ({token:?})")]
    NonFinite { row: usize, token: String },

    #[error("embedding set is empty")]
    Empty,

    #[error("tokens missing from vocabulary: {}", .0.join(", "))]
    MissingTokens(Vec<String>),

    #[error("invalid bias spec: {0}")]
    InvalidSpec(String),

    #[error("degenerate bias component for {0:?}: anchor coincides with the neutral reference")]
    DegenerateComponent(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("zero vector")]
    ZeroVector,

    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: String },

    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged {
        epoch: usize,
        step: usize,
        reason: String,
        last_good: Option<Box<Checkpoint>>,
    },

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("vocabularies differ")]
    VocabMismatch,

    #[error("pair lists differ: {0}")]
    PairMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
