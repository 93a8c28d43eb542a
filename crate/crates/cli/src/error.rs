use std::path::PathBuf;

/// Failures of a command, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] biccos_core::Error),

    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to encode report: {0}")]
    Encode(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use biccos_core::Error as E;
        match self {
            CliError::Usage(_) => 64,
            CliError::Core(E::InvalidArgument(_)) => 64,
            CliError::Core(E::Parse { .. } | E::DimensionMismatch(_) | E::NonFinite(_)) => 65,
            CliError::Core(E::Io { .. }) => 66,
            CliError::Write { .. } => 73,
            _ => 70,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
