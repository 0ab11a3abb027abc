use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("missing frame file: {0}")]
    MissingFrame(PathBuf),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("unknown action label: {0}")]
    Label(String),

    #[error("{requested} off-diagonal nonzeros requested but only {available} positions exist")]
    Overflow { requested: u64, available: u64 },

    #[error("covariance is degenerate: {0}")]
    Rank(String),

    #[error("normal equations are singular: {0}")]
    Singular(String),

    #[error("target has zero variance")]
    DegenerateTarget,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("not a pipeline directory: {0}")]
    NotAPipelineDir(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used by the command line for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Rank(_) | Error::Singular(_) | Error::DegenerateTarget | Error::Numerical(_) => {
                ErrorKind::Numerical
            }
            Error::Config(_) => ErrorKind::Usage,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
