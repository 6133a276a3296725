use std::path::PathBuf;

use iterfilt_core::Error as CoreError;

/// Process exit statuses.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Iterated filtering stopped early; the partial trace was written.
    #[error("iterated filtering aborted at iteration {iteration}: {error}")]
    Aborted { iteration: usize, error: CoreError },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Data { .. } => EXIT_CONFIG,
            CliError::Core(e) | CliError::Aborted { error: e, .. } => {
                if e.is_numerical() {
                    EXIT_NUMERICAL
                } else {
                    EXIT_CONFIG
                }
            }
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
