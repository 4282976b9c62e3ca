//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

/// Errors produced by dataset loading, training, calibration and evaluation.
#[derive(Debug, Clone)]
pub enum Error {
    /// A dataset file is missing or failed a format sanity check.
    Load { path: PathBuf, reason: String },
    /// Requested split sizes exceed what the source files provide.
    SplitSize { requested: usize, available: usize, split: &'static str },
    /// Invalid configuration (unknown ids, out-of-range values, missing keys).
    Config(String),
    /// Inputs with incompatible shapes.
    Shape(String),
    /// Training diverged or was aborted.
    Training { epoch: usize, reason: String },
    /// Model archive read/write failure or metadata mismatch.
    Archive(String),
    /// An operation was invoked before its required state existed
    /// (e.g. detection before calibration).
    State(String),
    /// Calibration could not be performed on the given scores.
    Calibration(String),
    /// Evaluation inputs do not belong together (fingerprint mismatch etc.).
    Evaluation(String),
    /// Underlying I/O failure.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Load { path, reason } => {
                write!(f, "failed to load {}: {}", path.display(), reason)
            }
            Error::SplitSize { requested, available, split } => write!(
                f,
                "requested {split} split of {requested} examples but only {available} are available"
            ),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Training { epoch, reason } => {
                write!(f, "training failed at epoch {epoch}: {reason}")
            }
            Error::Archive(msg) => write!(f, "model archive error: {msg}"),
            Error::State(msg) => write!(f, "invalid state: {msg}"),
            Error::Calibration(msg) => write!(f, "calibration error: {msg}"),
            Error::Evaluation(msg) => write!(f, "evaluation error: {msg}"),
            Error::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
