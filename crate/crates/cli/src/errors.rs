//! Exit-code contract: 0 success, 1 check failure, 2 usage/input error.
//! Every failure message carries a stage prefix so scripts can match on it.

use std::fmt;
use std::process::ExitCode;

#[derive(Debug)]
pub struct CliError {
    pub exit: u8,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn input(stage: &str, msg: impl fmt::Display) -> CliError {
        CliError { exit: 2, message: format!("{stage}: {msg}") }
    }

    pub fn failure(stage: &str, msg: impl fmt::Display) -> CliError {
        CliError { exit: 1, message: format!("{stage}: {msg}") }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.exit)
    }
}

pub type CliResult<T> = Result<T, CliError>;
