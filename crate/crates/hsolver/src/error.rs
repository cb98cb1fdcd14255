//! Error type shared across the solver.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("tree depth {depth} too large for {n} unknowns (need n >= 2^depth)")]
    DepthTooLarge { depth: usize, n: usize },

    #[error("matrix is not SPD: non-positive pivot at {context}")]
    NotSpd { context: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("singular matrix encountered in {0}")]
    Singular(String),
}
