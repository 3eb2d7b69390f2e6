use thiserror::Error;

/// Errors produced by the state, filtering, and measurement layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unsupported dimension {0} (expected 2, 4 or 8)")]
    UnsupportedDimension(usize),

    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPositive(f64),

    #[error("invalid trace {0}")]
    InvalidTrace(f64),

    #[error("invalid arm index {0}")]
    InvalidArm(usize),

    #[error("invalid probability {0}: must lie in (0, 1]")]
    InvalidProbability(f64),

    #[error("filter direction is not a unit vector (norm {0})")]
    NotUnitVector(f64),

    #[error("operator amplifies (spectral norm {0})")]
    Amplifying(f64),

    #[error("not a proper rotation: {0}")]
    ImproperRotation(String),

    #[error("extinction: transmitted fraction {0:.3e} is too small")]
    Extinction(f64),

    #[error("near-extinction: marginal is pure (minor eigenvalue {0:.3e}); the erasing filter would need p -> 0")]
    NearExtinction(f64),

    #[error("no transmitted pairs")]
    NoTransmittedPairs,

    #[error("incomplete measurement set: {0}")]
    IncompleteSettings(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("failed to parse state: {0}")]
    StateParse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
