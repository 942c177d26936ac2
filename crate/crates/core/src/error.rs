use thiserror::Error;

/// Errors produced by the synthesis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid grid, noise, control or solver settings.
    #[error("configuration error: {0}")]
    Config(String),
    /// A function was called with arguments violating its contract.
    #[error("usage error: {0}")]
    Usage(String),
    /// Non-finite values or a numerical breakdown.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// The dynamics or cost model produced an invalid value.
    #[error("model error: {0}")]
    Model(String),
    /// The LP solution has a cell with no active action.
    #[error("degenerate solution: cell {cell} has no action above the positivity threshold")]
    Degenerate { cell: usize },
    /// The LP solver failed to converge.
    #[error("solver error after {iterations} iterations: {message}")]
    Solver { iterations: usize, message: String },
    /// Input data fails an invariant (row sums, shapes, signs).
    #[error("validation error: {0}")]
    Validation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
