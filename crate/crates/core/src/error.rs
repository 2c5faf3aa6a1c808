use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
///
/// Variants are grouped by how a caller is expected to react: configuration
/// problems, bad input data, numeric failures, and misuse of stateful APIs.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("non-finite value produced by {location}")]
    Numeric { location: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("segmentation failed: {0}")]
    SegmentationFailed(String),

    #[error("malformed {format} input: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Image { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn numeric(location: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::State(_) => ErrorKind::User,
            Error::Numeric { .. } => ErrorKind::Numeric,
            Error::Dimension { .. }
            | Error::Validation(_)
            | Error::DegenerateData(_)
            | Error::SegmentationFailed(_)
            | Error::Format { .. }
            | Error::Io { .. }
            | Error::Image { .. } => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    User,
    Data,
    Numeric,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
