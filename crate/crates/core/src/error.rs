use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or qubit labels outside the indexing range.
    #[error("configuration error: {0}")]
    Config(String),

    /// Array/state dimension mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Ensemble weights or state norms violate normalization contracts.
    #[error("normalization error: {0}")]
    Normalization(String),

    /// A documented precondition of an operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Eigensolver failure.
    #[error("solver error: {0}")]
    Solver(String),

    /// Adaptive step size underflowed; the problem is too stiff for the
    /// requested tolerances.
    #[error("stiffness error: {0}")]
    Stiffness(String),

    /// Accuracy witness (e.g. norm drift) exceeded its bound.
    #[error("accuracy error: {0}")]
    Accuracy(String),

    /// Least-squares fit is ill-conditioned.
    #[error("fit error: {0}")]
    Fit(String),

    /// Argument outside the valid domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed input file.
    #[error("parse error: {file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
