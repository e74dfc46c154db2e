use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("feature batch needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("batch size mismatch: {left} vs {right}")]
    BatchMismatch { left: usize, right: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid kernel bandwidth {0}")]
    InvalidBandwidth(f64),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("soft label is not on the probability simplex (sum {sum})")]
    NotSimplex { sum: f64 },
    #[error("background swap donor has the same action class {0}")]
    SameActionDonor(usize),
    #[error("foreground of size {size} does not fit a {height}x{width} frame")]
    ForegroundTooLarge {
        size: usize,
        height: usize,
        width: usize,
    },
    #[error("the biased stream must never see ordered frames (identity transform)")]
    IdentityTransform,
    #[error("record list is empty")]
    EmptyRecords,
    #[error("scene classifier reached only {accuracy:.3} held-out accuracy (need {required:.2})")]
    SceneClassifierUnderfit { accuracy: f64, required: f64 },
    #[error("non-finite loss at epoch {epoch} step {step}: {breakdown}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        breakdown: String,
    },
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Self::Shape {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}
