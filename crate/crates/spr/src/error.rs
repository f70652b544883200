use std::io;
use std::path::PathBuf;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Malformed binary input; `offset` is the byte where decoding failed.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("byte offset {offset}: {reason}")]
pub struct FormatError {
    pub offset: u64,
    pub reason: String,
}

impl FormatError {
    pub fn new(offset: u64, reason: impl Into<String>) -> Self {
        Self {
            offset,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("missing input file {0}")]
    Missing(PathBuf),

    /// A core error raised while checking inputs, before any work starts.
    #[error("invalid input: {0}")]
    Invalid(spr_core::Error),

    /// A core error raised while the pipeline runs.
    #[error("runtime failure: {0}")]
    Runtime(spr_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            CliError::Missing(path)
        } else {
            CliError::Io { path, source }
        }
    }

    pub fn config(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Sorts a core error by whether it is about the inputs or the run.
    pub fn from_core(err: spr_core::Error) -> Self {
        match err {
            spr_core::Error::InvalidParameter { .. } | spr_core::Error::Config(_) => CliError::Invalid(err),
            other => CliError::Runtime(other),
        }
    }

    /// 2 for usage, configuration and input problems, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 3,
            _ => 2,
        }
    }
}
