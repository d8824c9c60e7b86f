use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration, input files or unwritable outputs.
    #[error("{0}")]
    Input(String),

    /// The library rejected the data or the configuration.
    #[error(transparent)]
    Psd(#[from] psd::Error),

    /// Outputs were written but the decomposition did not settle.
    #[error("decomposition did not converge within the iteration limit; partial outputs written to {0}")]
    NotConverged(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Input(_) | CliError::Psd(_) => ExitCode::from(2),
            CliError::NotConverged(_) => ExitCode::from(3),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
