//! Configuration-driven front end: sampling, correlation estimation, bound
//! computation and the verification suites, orchestrated from a TOML config.

pub mod commands;
pub mod config;
pub mod verify;

use thiserror::Error;

/// Errors mapped onto process exit codes: validation problems exit 1,
/// runtime/numeric problems exit 2, verification failures exit 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{failed} of {total} verification criteria failed")]
    VerificationFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::VerificationFailed { .. } => 3,
        }
    }

    pub fn validation(e: impl std::fmt::Display) -> CliError {
        CliError::Validation(e.to_string())
    }

    pub fn runtime(e: impl std::fmt::Display) -> CliError {
        CliError::Runtime(e.to_string())
    }
}
