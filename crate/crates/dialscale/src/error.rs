//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

/// Errors produced by the dialscale pipeline.
#[derive(Debug)]
pub enum Error {
    /// I/O failure, annotated with the path involved.
    Io { path: PathBuf, source: std::io::Error },
    /// A corpus record could not be parsed (abort mode) or violated an invariant.
    BadRecord { path: PathBuf, line: usize, reason: String },
    /// The same session id appeared on two lines of one corpus file.
    DuplicateId { id: String, first_line: usize, second_line: usize },
    /// A session id was inserted twice when assembling a corpus in memory.
    DuplicateSession { id: String },
    /// An operation that requires documents was given an empty corpus.
    EmptyCorpus,
    /// A session has too few utterances for the requested operation.
    SessionTooShort { id: String, turns: usize, min: usize },
    /// The corpus has too few eligible sessions for the requested operation.
    CorpusTooSmall { needed: usize, actual: usize },
    /// Vector dimensions disagree.
    DimensionMismatch { expected: usize, got: usize },
    /// A similarity or loss input was NaN or infinite.
    NonFinite { what: &'static str },
    /// A sampling weight was negative.
    NegativeWeight { index: usize, weight: f64 },
    /// Training was requested on an empty instance list.
    EmptyTrainingSet,
    /// An id was looked up in an embedding table or index that does not contain it.
    UnknownId { id: String },
    /// An embedding table mixes vector dimensions.
    InconsistentDimension { id: String, expected: usize, got: usize },
    /// A persisted binary artifact has a bad magic, version, or layout.
    BadArtifact { path: PathBuf, reason: String },
    /// Invalid configuration value.
    Config { reason: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::BadRecord { path, line, reason } => {
                write!(f, "{}:{line}: bad record: {reason}", path.display())
            }
            Error::DuplicateId { id, first_line, second_line } => write!(
                f,
                "duplicate session id {id:?} on lines {first_line} and {second_line}"
            ),
            Error::DuplicateSession { id } => write!(f, "duplicate session id {id:?}"),
            Error::EmptyCorpus => write!(f, "corpus is empty"),
            Error::SessionTooShort { id, turns, min } => {
                write!(f, "session {id:?} has {turns} turns, need at least {min}")
            }
            Error::CorpusTooSmall { needed, actual } => {
                write!(f, "corpus has {actual} eligible sessions, need at least {needed}")
            }
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::NonFinite { what } => write!(f, "non-finite {what}"),
            Error::NegativeWeight { index, weight } => {
                write!(f, "negative weight {weight} at index {index}")
            }
            Error::EmptyTrainingSet => write!(f, "training instance list is empty"),
            Error::UnknownId { id } => write!(f, "unknown id {id:?}"),
            Error::InconsistentDimension { id, expected, got } => write!(
                f,
                "vector for id {id:?} has dimension {got}, expected {expected}"
            ),
            Error::BadArtifact { path, reason } => {
                write!(f, "{}: {reason}", path.display())
            }
            Error::Config { reason } => write!(f, "invalid config: {reason}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn artifact(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::BadArtifact { path: path.into(), reason: reason.into() }
    }
}
