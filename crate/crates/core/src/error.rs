use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: String,
    },

    #[error("field has nonzero mean {mean:e}; the Green convolution is defined on zero-mean fields only")]
    NonZeroMean { mean: f64 },

    #[error("vortex under-resolved: n*ell = {n_ell:.3} < {min}")]
    UnderResolved { n_ell: f64, min: f64 },

    #[error("grid mismatch: expected n = {expected}, got n = {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("time step {dt:e} exceeds stability bound {bound:e}")]
    Unstable { dt: f64, bound: f64 },

    #[error("trajectory blew up at t = {time:.6} (step {step}): {reason}")]
    BlowUp {
        time: f64,
        step: usize,
        reason: String,
    },

    #[error("{failed} of {total} trajectories aborted (more than 1%)")]
    EnsembleFailed { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, value: f64, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        value,
        reason: reason.into(),
    }
}
