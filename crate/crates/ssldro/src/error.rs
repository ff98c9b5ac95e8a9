use std::path::PathBuf;

use ssldro_core::Error as CoreError;

/// Failure of a command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: row {row}: {message}")]
    Row {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub const EXIT_USAGE: i32 = 2;
    pub const EXIT_DATA: i32 = 3;
    pub const EXIT_NUMERICAL: i32 = 4;

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => Self::EXIT_USAGE,
            CliError::Row { .. } | CliError::Io { .. } | CliError::Data(_) => Self::EXIT_DATA,
            CliError::Numerical(_) => Self::EXIT_NUMERICAL,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidArgument(_) => CliError::Usage(msg),
            CoreError::DimensionMismatch { .. }
            | CoreError::InvalidLabel(_)
            | CoreError::Empty
            | CoreError::NoFiniteCost
            | CoreError::EmptyPartition(_)
            | CoreError::NotNormalized(_)
            | CoreError::CapExceeded { .. }
            | CoreError::FoldTooSmall { .. } => CliError::Data(msg),
            CoreError::BracketFailure(_)
            | CoreError::Diverged(_)
            | CoreError::IterationCap(_)
            | CoreError::NonConvergence(_)
            | CoreError::NotPositiveDefinite => CliError::Numerical(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
