use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GshError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("numerical failure in {op}: {detail}")]
    Numerical { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error(
        "latent sampling infeasible: {failing_pairs} pair(s) exceeded tau = {tau} after {attempts} attempts"
    )]
    Infeasible {
        tau: f64,
        failing_pairs: usize,
        attempts: usize,
    },

    #[error("feature dimension {requested} exceeds cap {cap}")]
    FeatureCap { requested: usize, cap: usize },

    #[error("precondition failed in {op}: {detail}")]
    Precondition { op: &'static str, detail: String },

    #[error("training diverged at step {step}: total loss = {value}")]
    Divergence { step: usize, value: f64 },

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("missing input {}: {reason}", path.display())]
    MissingInput { path: PathBuf, reason: String },

    #[error("malformed file {}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GshError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(GshError::Shape {
        op,
        detail: detail.into(),
    })
}
