//! Library-wide error type with a stable code for machine-grep-able diagnostics.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    /// A line-oriented input file failed to parse.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    /// Well-formed input that violates a domain invariant.
    #[error("validation error: {0}")]
    Validation(String),
    /// A caller stepped outside an operation's contract.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A training run cannot proceed (degenerate data, missing views, ...).
    #[error("training error: {0}")]
    Training(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// The remote scorer stayed unreachable through every retry.
    #[error("scorer unavailable after {attempts} attempts: {message}")]
    ScorerUnavailable { attempts: u32, message: String },
    /// The remote scorer answered, but not in the shape the wire protocol demands.
    #[error("scorer protocol error: {0}")]
    Protocol(String),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable code used in `ERROR:<code>:` stderr diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            CoreError::Parse { .. } => "PARSE",
            CoreError::Validation(_) => "VALIDATION",
            CoreError::Argument(_) => "ARGUMENT",
            CoreError::Training(_) => "TRAINING",
            CoreError::Io { .. } => "IO",
            CoreError::ScorerUnavailable { .. } => "SCORER_UNAVAILABLE",
            CoreError::Protocol(_) => "PROTOCOL",
        }
    }

    /// Process exit code: 1 for validation-class failures, 2 for I/O and network.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoreError::Parse { .. }
            | CoreError::Validation(_)
            | CoreError::Argument(_)
            | CoreError::Training(_) => 1,
            CoreError::Io { .. } | CoreError::ScorerUnavailable { .. } | CoreError::Protocol(_) => {
                2
            }
        }
    }
}
