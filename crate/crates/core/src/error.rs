use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unrepresentable token {0:?}")]
    Unrepresentable(String),

    #[error("word id {id} out of range for vocabulary of size {vocab}")]
    UnknownWord { id: usize, vocab: usize },

    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("degenerate context vector (norm {0:e})")]
    DegenerateContext(f64),

    #[error("perplexity undefined for SemFit")]
    PerplexityUndefined,

    #[error("corpus has {contexts} distinct contexts; enumeration limit is {limit}, use sampling mode")]
    NotEnumerable { contexts: usize, limit: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("Bessel evaluation failed: {0}")]
    Bessel(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
}

impl Error {
    /// True for failures of floating-point evaluation rather than of the
    /// caller's inputs or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Bessel(_) | Error::DegenerateContext(_)
        )
    }
}
