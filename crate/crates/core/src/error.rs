//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpoError {
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),

    #[error("negative time step {0}")]
    NegativeDt(f64),

    #[error("power spectral density is not symmetric positive definite")]
    InvalidPsd,

    #[error("query time {tau} outside interval [{start}, {end}]")]
    OutsideInterval { tau: f64, start: f64, end: f64 },

    #[error("process covariance is singular (degenerate psd or zero interval)")]
    SingularProcessCov,

    #[error("invalid time window [{0}, {1}]")]
    InvalidWindow(f64, f64),

    #[error("no {0} samples inside the integration window")]
    EmptyStream(&'static str),

    #[error("{0} timestamps must be finite and strictly increasing")]
    UnsortedStream(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidSpec(String),

    #[error("rank-deficient normal equations (block {0})")]
    RankDeficient(usize),

    #[error("solver did not converge after {iterations} iterations (residual norm {residual:.6e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("integrator self-check failed: step halving changed the result by {0:.3e}")]
    OracleSelfCheck(f64),

    #[error("preintegration window mismatch: state at t={state_t}, window starts at {window_t}")]
    WindowMismatch { state_t: f64, window_t: f64 },

    #[error("landmark behind camera (depth {0:.3e})")]
    NonPositiveDepth(f64),

    #[error("solver diverged: {message}; objective trace {trace:?}")]
    Divergence { message: String, trace: Vec<f64> },

    #[error("malformed csv input: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
