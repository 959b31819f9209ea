use std::process::ExitCode;

use fedsim_core::FedError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid or unreadable configuration or input tables.
    #[error("configuration error: {0}")]
    Config(String),
    /// Anything that went wrong while running.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl From<FedError> for CliError {
    fn from(e: FedError) -> Self {
        match e {
            FedError::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
