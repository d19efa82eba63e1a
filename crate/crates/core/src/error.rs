use thiserror::Error;

/// Errors raised by the inference routines.
///
/// The kebab-case tokens in the messages are stable and are what the CLI
/// and the Python bindings surface to callers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty-dataset: no samples")]
    EmptyDataset,
    #[error("empty-fold: split of {n} samples at fraction {fraction} leaves a fold empty")]
    EmptyFold { n: usize, fraction: f64 },
    #[error("dimension-mismatch: expected {expected} covariates, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid-sample: {0}")]
    InvalidSample(String),
    #[error("csv: row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("degenerate-treatment: training data contains a single treatment arm")]
    DegenerateTreatment,
    #[error("invalid-gamma: gamma must be >= 1, got {0}")]
    InvalidGamma(f64),
    #[error("invalid-level: {0}")]
    InvalidLevel(String),
    #[error("M-too-small: bound M = {m} is below an observed bound value {observed}")]
    MTooSmall { m: f64, observed: f64 },
    #[error("all-zero-weights: weighted conformal quantile needs positive total weight")]
    AllZeroWeights,
    #[error("empty-identification-set: {0}")]
    EmptyIdentificationSet(String),
    #[error("nestedness-violation: interval at gamma {gamma} does not contain the interval at the previous grid value")]
    NestednessViolation { gamma: f64 },
    #[error("invalid-argument: {0}")]
    InvalidArgument(String),
    #[error("invariant-violation: {0}")]
    InvariantViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
