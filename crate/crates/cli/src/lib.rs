//! Command implementations behind the `safeset` binary.

pub mod commands;
pub mod config;

use std::path::Path;

pub use config::RunConfig;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const VERIFY_FAILED: u8 = 1;
    pub const PRECONDITION: u8 = 2;
    pub const CONFIG: u8 = 64;
    pub const DATA: u8 = 65;
    pub const MISSING_FILE: u8 = 66;
    pub const INTERNAL: u8 = 70;
    pub const IO: u8 = 74;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("file not found: {0}")]
    Missing(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] safeset::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Data(_) => exit::DATA,
            CliError::Missing(_) => exit::MISSING_FILE,
            CliError::Precondition(_) => exit::PRECONDITION,
            CliError::Io(_) => exit::IO,
            CliError::Core(safeset::Error::InitUnverifiable(_)) => exit::PRECONDITION,
            CliError::Core(_) => exit::INTERNAL,
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Missing(path.display().to_string()),
        _ => CliError::Io(format!("{}: {e}", path.display())),
    })
}
