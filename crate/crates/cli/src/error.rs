use std::fmt;

use robust_conformal::Error;

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or inconsistent input data: exit code 2.
    Input(String),
    /// Invalid configuration values: exit code 3.
    Config(String),
    /// Anything else (I/O while writing outputs, internal invariants): exit code 1.
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Config(_) => 3,
            CliError::Failure(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Failure(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::EmptyDataset
            | Error::EmptyFold { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidSample(_)
            | Error::Csv { .. }
            | Error::DegenerateTreatment
            | Error::AllZeroWeights
            | Error::EmptyIdentificationSet(_) => CliError::Input(msg),
            Error::InvalidGamma(_)
            | Error::InvalidLevel(_)
            | Error::MTooSmall { .. }
            | Error::InvalidArgument(_) => CliError::Config(msg),
            Error::NestednessViolation { .. } | Error::InvariantViolation(_) => {
                CliError::Failure(msg)
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
