use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("too few samples: need at least {needed}, got {given}")]
    TooFewSamples { needed: usize, given: usize },

    #[error("degenerate sample: zero variance")]
    DegenerateSample,

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("window for peak {peak} does not fit in a signal of {len} samples")]
    WindowOutOfBounds { peak: usize, len: usize },

    #[error("cluster {0} is empty")]
    EmptyCluster(usize),

    #[error("label {label} at spike {index} is outside [0, {k})")]
    LabelOutOfRange { index: usize, label: i64, k: usize },

    #[error("LDA rank limit: requested d={d} but K-1={max}")]
    LdaRankLimit { d: usize, max: usize },

    #[error("between-class scatter is zero; no discriminative direction exists")]
    DegenerateScatter,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("shape mismatch in {what}: {detail}")]
    Shape { what: &'static str, detail: String },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
