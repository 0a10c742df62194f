use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("attribute mismatch: {0}")]
    AttributeMismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("only {achieved} of {target} samples could be placed")]
    InsufficientSamples { achieved: usize, target: usize },

    #[error("mesh has no usable faces")]
    EmptyMesh,

    #[error("dataset is empty or too small: {0}")]
    EmptyDataset(String),

    #[error("inconsistent dataset: {0}")]
    InconsistentDataset(String),

    #[error("invalid basis size {requested}: must be at most {max}")]
    InvalidBasisSize { requested: usize, max: usize },

    #[error("eigensolver failed to converge")]
    ConvergenceFailure,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("batch of {0} rows is too small (need at least 2)")]
    BatchTooSmall(usize),

    #[error("tape does not match network: {0}")]
    TapeMismatch(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("empty shape set: {0}")]
    EmptySet(String),

    #[error("model was trained against basis {expected}, but basis {actual} was supplied")]
    BasisHashMismatch { expected: String, actual: String },

    #[error("invalid container: {0}")]
    InvalidContainer(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch { expected, actual }
    }

    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::ConvergenceFailure
                | Error::NonFiniteLoss(_)
                | Error::Diverged { .. }
                | Error::InsufficientSamples { .. }
        )
    }
}
