use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("label {label} is out of range for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },

    #[error("smooth rate {0} is invalid (must be finite and <= 1)")]
    InvalidRate(f64),

    #[error("noise rate {name}={value} must lie in [0, 1]")]
    NoiseRateOutOfRange { name: &'static str, value: f64 },

    #[error("noise rate {0} is outside the supported regime e < 1/2")]
    UndefinedRegime(f64),

    #[error("invalid noise specification: {0}")]
    InvalidNoiseSpec(String),

    #[error("transition matrix is singular (|det| = {0:e})")]
    SingularMatrix(f64),

    #[error("corrected probability {0} is not positive")]
    NonPositiveProbability(f64),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("prior does not sum to 1 (sum = {0})")]
    PriorNotNormalized(f64),

    #[error("operation requires {required} classes, got {actual}")]
    ClassCount { required: usize, actual: usize },

    #[error("batch of size {0} is too small")]
    BatchTooSmall(usize),

    #[error("clean subset has no samples with label 1")]
    EmptyCleanSubset,

    #[error("noise has already been injected into this dataset")]
    DoubleInjection,

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("need at least 2 replicates, got {0}")]
    TooFewReplicates(usize),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
