use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("expected {expected} channels, got {got}")]
    ChannelCount { expected: usize, got: usize },

    #[error("bin count {bins} not valid for series of length {len}")]
    BinCount { bins: usize, len: usize },

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("out of range: {0}")]
    Range(String),

    #[error("cannot stratify: {0}")]
    Stratify(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("misaligned modalities: {0}")]
    Alignment(String),

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("need at least two classes, got {0}")]
    ClassCount(usize),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure classes, used by the command line to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::SingularCovariance(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
