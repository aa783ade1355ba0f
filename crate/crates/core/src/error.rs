use thiserror::Error;

/// Errors produced by the suruq library.
#[derive(Debug, Error)]
pub enum Error {
    /// Array dimensions do not line up (row/column counts, vector lengths).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input data is malformed (non-finite values, ragged rows, bad ranges).
    #[error("invalid data: {0}")]
    Data(String),

    /// A configuration value is out of its legal range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The input is degenerate for the requested computation
    /// (all-zero matrix, zero-width sample, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The Sobol direction-number table does not cover the requested dimension.
    #[error("unsupported dimension {dim}: the direction-number table covers 1..={max}")]
    UnsupportedDimension { dim: usize, max: usize },

    /// A kernel matrix stayed non-positive-definite after jitter escalation.
    #[error("conditioning failure: {0}")]
    Conditioning(String),

    /// Hyperparameter optimization failed on every restart.
    #[error("model fit failed: {0}")]
    Fit(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A text file (CSV, config) could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// A model file was written by an unsupported format version.
    #[error("unsupported model file version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    /// A model file is truncated or fails its integrity check.
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let msg = e.to_string();
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => Error::Parse(msg),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
