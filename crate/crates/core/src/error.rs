use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (camera-space z = {0})")]
    BehindCamera(f64),
    #[error("non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("normal is not unit length (norm = {0})")]
    NonUnitNormal(f64),
    #[error("image size {height}x{width} is not divisible by {factor}")]
    NonDivisibleSize {
        height: usize,
        width: usize,
        factor: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point cloud is missing per-point weights")]
    MissingWeights,
    #[error("kappa must be positive, got {0}")]
    NonPositiveKappa(f64),
    #[error("sample budget {requested} exceeds available pixel count {available}")]
    SampleBudget { requested: usize, available: usize },
    #[error("validity mask is empty")]
    EmptyMask,
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("{0} is empty after frustum culling against the input views")]
    EmptyAfterCull(&'static str),
    #[error("TSDF volume of {0} voxels exceeds the configured limit")]
    VolumeTooLarge(usize),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
