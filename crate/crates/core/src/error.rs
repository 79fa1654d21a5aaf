use thiserror::Error;

/// Errors produced by the estimation toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("focal length must be positive and finite, got {0}")]
    InvalidFocal(f64),
    #[error("matrix is not a rotation (orthonormality error {0:e})")]
    NotARotation(f64),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("degenerate sample: {0}")]
    Degenerate(&'static str),
    #[error("too few correspondences: need {needed}, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("infeasible scene: {0}")]
    Infeasible(String),
    #[error("scale/shift fit failed: {0}")]
    FitFailed(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
