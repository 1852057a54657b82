use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry at (token {token:?}, column {column})")]
    NonFinite { token: String, column: usize },

    #[error("non-finite value: {0}")]
    NonFiniteValue(String),

    #[error("duplicate token {0:?}")]
    DuplicateToken(String),

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("index {index} out of range for vocabulary of size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,

    #[error("target rank {target} unreachable: vocabulary reaches at most rank {max_rank}")]
    UnreachableRank { target: usize, max_rank: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("initial word index {0} is not part of the selected basis")]
    InitialWordNotSelected(usize),

    #[error("non-finite {what} at step {step}")]
    Diverged { what: &'static str, step: usize },

    #[error("invalid prompt template: {0}")]
    Template(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
