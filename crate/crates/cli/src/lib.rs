//! Library side of the experiment runner: configuration, commands, and the
//! density-matrix oracle used by the oracle-compare mode. The binary in
//! `main.rs` is a thin argument-parsing wrapper so that the integration and
//! acceptance suites can drive the commands directly.

pub mod commands;
pub mod config;
pub mod oracle;

use std::fmt;

/// Command-level error with the process exit code attached:
/// configuration problems exit 2, acceptance-threshold failures exit 3,
/// everything else exits 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Threshold(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Threshold(_) => 3,
            CliError::Failure(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Threshold(m) => write!(f, "acceptance threshold failed: {m}"),
            CliError::Failure(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<cavlink_core::Error> for CliError {
    fn from(e: cavlink_core::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(format!("i/o error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Failure(format!("serialization error: {e}"))
    }
}
