use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or a missing input file.
    #[error("config error: {0}")]
    Config(String),
    #[error("error: {0}")]
    Runtime(#[from] fuzzyseg::Error),
    /// A check command found a violated invariant.
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        })
    }
}
