use std::fmt;

use spikesort_core::Error;

/// CLI failure carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or parameters (exit 2).
    Usage(String),
    /// Missing, unreadable or malformed data (exit 3).
    Data(String),
    /// The numerics could not produce a result (exit 4).
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidParameter { .. } => CliError::Usage(msg),
            Error::EmptyInput
            | Error::TooFewSamples { .. }
            | Error::DimensionMismatch { .. }
            | Error::WindowOutOfBounds { .. }
            | Error::LabelOutOfRange { .. }
            | Error::Shape { .. }
            | Error::Format { .. }
            | Error::Io { .. } => CliError::Data(msg),
            Error::DegenerateSample
            | Error::EmptyCluster(_)
            | Error::LdaRankLimit { .. }
            | Error::DegenerateScatter
            | Error::Numerical(_) => CliError::Numerical(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
