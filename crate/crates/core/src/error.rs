use thiserror::Error;

use crate::lp::LpError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A caller broke an operation's precondition (for example asking for the
    /// posterior of an item that is already observed).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("filter eliminated all data")]
    EmptyAfterFilter,

    #[error("numerical degeneracy: attitude row for VQ {vq} has zero mass")]
    Degenerate { vq: usize },

    #[error("numerical degeneracy: component posterior has zero mass")]
    DegenerateMixture,

    #[error("linear program failed: {0}")]
    Lp(#[from] LpError),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch in {0}")]
    Checksum(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
