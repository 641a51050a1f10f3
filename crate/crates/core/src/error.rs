use thiserror::Error;

/// Errors surfaced by fallible library operations.
///
/// Dimension mismatches in the low-level vector primitives are programmer
/// errors and panic instead; everything that depends on run-time data or
/// configuration goes through this type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {context} at step {step}")]
    NonFinite { context: String, step: usize },

    #[error("meta-training diverged at outer iteration {iter}")]
    Divergence { iter: usize },

    #[error("finite-difference oracle hit a non-finite value ({0})")]
    OracleFailure(String),

    #[error("matrix is not symmetric within {tol:e} (max asymmetry {max:e})")]
    NotSymmetric { tol: f64, max: f64 },

    #[error("constraint matrix is rank deficient")]
    RankDeficient,

    #[error("task exposes no disjoint tail set but separate-tail sampling was requested")]
    MissingTail,

    #[error("optimizer snapshot has dimension {blob} but model has dimension {model}")]
    SnapshotDimMismatch { blob: usize, model: usize },

    #[error("operation requires {required} but the {what} does not provide it")]
    Unsupported { required: String, what: String },
}

pub type Result<T> = std::result::Result<T, Error>;
