//! Command-line front end: configuration loading, subcommand orchestration,
//! and plot-ready output emission for the multivariate threshold-exceedance
//! model in the core crate.

pub mod commands;
pub mod config;
pub mod products;

use std::fmt;

/// CLI failure classified by exit code: 1 configuration, 2 data,
/// 3 numerical.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mevpot::Error> for CliError {
    fn from(e: mevpot::Error) -> CliError {
        use mevpot::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::Numerical(m) => CliError::Numerical(m),
            E::Json(m) => CliError::Config(m.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}
