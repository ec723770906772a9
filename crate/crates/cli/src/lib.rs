//! Library side of the `nmarkov` binary: run configurations, the command
//! implementations and the validation suite.

pub mod commands;
pub mod config;
pub mod oracle;
pub mod validate;

use std::process::ExitCode;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_RESOURCE: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] markovize::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("validation failed: {}", .0.join(", "))]
    ValidationFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        use markovize::Error as E;
        let code = match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(E::ResourceCap(_)) => EXIT_RESOURCE,
            CliError::Core(
                E::Domain(_) | E::DimensionMismatch(_) | E::Parse(_) | E::IndexOutOfRange(_),
            ) => EXIT_USAGE,
            CliError::Core(_) | CliError::Io(_) => 1,
            CliError::ValidationFailed(_) => EXIT_VALIDATION,
        };
        ExitCode::from(code)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
