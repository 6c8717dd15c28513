use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse triage bucket for an [`Error`], used by harnesses to map failures
/// onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Malformed, corrupt or inconsistent input data.
    Data,
    /// A violation of the known/unknown experimental protocol.
    Protocol,
    /// Anything else (I/O on outputs, configuration, numerical failure).
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: format error: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: corrupt file: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("{path}: model format version {found} is not supported (expected {expected})")]
    Migration {
        path: PathBuf,
        found: u16,
        expected: u16,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("class {class_id} ({class_name}) appears in both the known and the unknown split")]
    SplitContamination { class_id: u32, class_name: String },

    #[error("reference error: {0}")]
    Reference(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("semantic matrix is empty: no training patches were counted")]
    EmptyTraining,

    #[error("image {image_id}: every patch matched an empty cluster, prediction is undefined")]
    UndefinedPrediction { image_id: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("k={k}: {source}")]
    AtK {
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Format { .. }
            | Error::Corruption { .. }
            | Error::Migration { .. }
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Reference(_)
            | Error::Degenerate(_)
            | Error::UndefinedPrediction { .. } => ErrorCategory::Data,
            // A missing or unreadable input file is a data problem too.
            Error::Io { source, .. } if source.kind() != std::io::ErrorKind::PermissionDenied => {
                ErrorCategory::Data
            }
            Error::SplitContamination { .. } | Error::Protocol(_) => ErrorCategory::Protocol,
            Error::AtK { source, .. } => source.category(),
            Error::EmptyTraining | Error::Config(_) | Error::Io { .. } => ErrorCategory::Internal,
        }
    }
}
