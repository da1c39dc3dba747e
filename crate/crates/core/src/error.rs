//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GoiError {
    /// Point depth is at or below the cheirality floor; projection is undefined.
    #[error("point depth {depth} is below the minimum {min}; cannot project")]
    DepthDomain { depth: f64, min: f64 },

    /// Rotation angle too close to pi for a well-defined logarithm.
    #[error("rotation angle {angle} is within {margin} of pi; log is out of domain")]
    LogDomain { angle: f64, margin: f64 },

    /// A matrix that must be symmetric positive-definite is not.
    #[error("{context}: matrix is not symmetric positive-definite")]
    NotSpd { context: &'static str },

    /// Rotation matrix fails the orthonormality/determinant invariant.
    #[error("rotation matrix invalid: orthonormality residual {ortho}, det deviation {det}")]
    InvalidRotation { ortho: f64, det: f64 },

    /// The observable index set is empty; restricted inversion is impossible.
    #[error("observable subspace is empty; the configuration is totally unobservable")]
    TotallyUnobservable,

    /// A supplied residual split does not add up to the actual residual.
    #[error("residual split violates r = r_static + b_dynamic (mismatch {mismatch})")]
    InconsistentSplit { mismatch: f64 },

    /// A Gauss-Newton step left the trust basin.
    #[error("solver step G-norm {step} exceeded the basin radius guard {r0}")]
    BasinEscape { step: f64, r0: f64 },

    /// Configuration or argument validation failure.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An index was expected to be observable but is not.
    #[error("index {index} is not in the observable set")]
    UnobservableIndex { index: usize },
}

pub type Result<T> = std::result::Result<T, GoiError>;
