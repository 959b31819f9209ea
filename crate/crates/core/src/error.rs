use thiserror::Error;

/// Errors raised by the simulation core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    /// Inconsistent dimensions, out-of-range values or unsatisfiable settings.
    #[error("configuration error: {0}")]
    Config(String),
    /// A round was driven with inputs that violate the protocol (empty update
    /// lists, plans that reference unknown clients, empty client data).
    #[error("protocol error: {0}")]
    Protocol(String),
    /// Training produced a non-finite value.
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, FedError>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(FedError::Config(msg.into()))
}

pub(crate) fn protocol_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(FedError::Protocol(msg.into()))
}
