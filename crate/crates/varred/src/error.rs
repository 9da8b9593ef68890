use thiserror::Error;

/// Errors produced by dataset loading, validation, and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// Input file could not be parsed (CSV syntax, bad number, ...).
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Input is well-formed but violates the data contract (non-binary
    /// treatment flag, missing outcome cell, unknown column, ...).
    #[error("invalid data: {0}")]
    Domain(String),

    /// Input shape or values make the requested computation undefined
    /// (empty arm, fewer than two observations, zero variance, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Caller broke an API precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// External predictions could not be matched to the dataset rows.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Datasets that must share a schema do not.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
