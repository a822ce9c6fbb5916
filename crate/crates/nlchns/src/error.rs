use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("kernel parameter {name} = {value} cannot be resolved on this grid (need {name} >= {limit})")]
    ResolutionTooCoarse {
        name: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("field has nonzero mean {mean:.3e} (tolerance {tol:.3e}); operation requires mean-zero data")]
    NonzeroMean { mean: f64, tol: f64 },

    #[error("CFL violation: dt = {dt:.3e} exceeds limit {limit:.3e} (max |u| = {max_u:.3e})")]
    CflViolation { dt: f64, limit: f64, max_u: f64 },

    #[error("non-finite value encountered at t = {t:.6} (step {step})")]
    NonFinite { t: f64, step: usize },

    #[error("signal too short: span {span:.3e} is below the window {window:.3e}")]
    SignalTooShort { span: f64, window: f64 },

    #[error("empty set passed to a set operation")]
    EmptySet,

    #[error("energy target {target:.6e} is outside the attainable range [{min:.6e}, inf)")]
    UnreachableTarget { target: f64, min: f64 },

    #[error("assumption verification failed: {0}")]
    AssumptionFailed(String),

    #[error("dissipative radius too small: R0^2 = {r0_sq:.6e} must exceed {threshold:.6e}")]
    RadiusTooSmall { r0_sq: f64, threshold: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("snapshot decode error: {0}")]
    SnapshotFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
