//! Command-line front end: run configuration and subcommand implementations.

pub mod commands;
pub mod config;

use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Missing(PathBuf),
    Fingerprint(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Fingerprint(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Missing(p) => write!(f, "missing artifact: {}", p.display()),
            CliError::Fingerprint(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<ordimpute::Error> for CliError {
    fn from(e: ordimpute::Error) -> Self {
        match e {
            ordimpute::Error::Fingerprint { .. } => CliError::Fingerprint(e.to_string()),
            ordimpute::Error::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}
