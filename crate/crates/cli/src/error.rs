use std::path::Path;

use thiserror::Error;

/// Failures of a command, each mapped to its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("verification failed: {0}")]
    Verify(String),
    #[error(transparent)]
    Engine(tse_diffusion::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use tse_diffusion::Error as E;
        match self {
            Self::Config(_) | Self::Engine(E::Config(_)) => 2,
            Self::Io { .. } | Self::Engine(E::Io(_) | E::Wav(_) | E::Corrupt(_)) => 3,
            Self::Verify(_) => 4,
            Self::Engine(_) => 1,
        }
    }
}

impl From<tse_diffusion::Error> for CliError {
    fn from(e: tse_diffusion::Error) -> Self {
        Self::Engine(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
