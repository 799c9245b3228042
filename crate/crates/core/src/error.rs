use thiserror::Error;

/// Errors raised by model construction, solvers and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("time {t} outside the admissible range: {reason}")]
    InvalidTime { t: f64, reason: String },

    #[error("policy output leaves the constraint set at step {step} (t = {t}): {detail}")]
    InadmissibleControl { step: usize, t: f64, detail: String },

    #[error("drift norm {norm} exceeds the bound {bound} at step {step}")]
    DriftBound { step: usize, norm: f64, bound: f64 },

    #[error("picard iteration did not contract on window {window}: last ratio {ratio}, distance {distance}")]
    NoContraction {
        window: usize,
        ratio: f64,
        distance: f64,
    },

    #[error("negative fundamental-relation integrand {value} at step {step}, path {path}")]
    NegativeGap { step: usize, path: usize, value: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
