use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("NIfTI format error: {0}")]
    Format(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("invalid label value {value} at voxel {index}; labels must be one of 0, 1, 2, 4")]
    InvalidLabel { value: u8, index: usize },

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("cannot combine an empty update list")]
    EmptyUpdates,

    #[error("parameter dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("round {round} failed: {reason}")]
    RoundFailed { round: usize, reason: String },

    #[error("trainer contract violation: {0}")]
    ContractViolation(String),

    #[error("history is empty")]
    EmptyHistory,

    #[error("unknown strategy {name:?}; registered strategies: {}", registered.join(", "))]
    UnknownStrategy { name: String, registered: Vec<String> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ranking input error: {0}")]
    Ranking(String),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for validation errors (bad input,
    /// bad configuration), 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::RoundFailed { .. }
            | Error::ContractViolation(_)
            | Error::EmptyHistory => 2,
            _ => 1,
        }
    }
}
