use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numerical blowup at t = {t}")]
    NumericalBlowup { t: f64 },

    #[error("truncation error at t = {t}: top-level population {top_pop:e} exceeds {limit:e}")]
    Truncation { t: f64, top_pop: f64, limit: f64 },

    #[error("fit window [{lo}, {hi}] invalid: {reason}")]
    WindowInvalid { lo: f64, hi: f64, reason: String },

    #[error("Wigner peak lies on the grid boundary at ({x}, {p}); enlarge the grid")]
    BoundaryPeak { x: f64, p: f64 },

    #[error("no steady state: drift matrix is singular (gamma = {gamma})")]
    NoSteadyState { gamma: f64 },

    #[error("pairing error: {0}")]
    Pairing(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
