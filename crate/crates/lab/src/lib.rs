//! Experiment runner behind the `odenet-lab` binary.
//!
//! Each command reads an [`ExperimentConfig`], writes its tables into an
//! output directory together with `config.resolved.toml` and `VERSION`, and
//! returns an [`Outcome`]. Outputs are pure functions of the config and seed.

pub mod commands;
pub mod config;
pub mod output;

use std::fmt;

pub use commands::{run_command, Command};
pub use config::ExperimentConfig;

pub const VERSION: &str = concat!("odenet-lab ", env!("CARGO_PKG_VERSION"));

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_FLAGGED: i32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum LabError {
    /// Files could not be read or written, or an input file is malformed.
    Io(String),
    /// Invalid or inconsistent configuration.
    Config(String),
    /// Overflow, divergence or another numerical failure.
    Numerical(String),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Io(_) => EXIT_IO,
            LabError::Config(_) => EXIT_CONFIG,
            LabError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    /// Prefixes the message with the config key it concerns.
    pub fn at(self, key: &str) -> Self {
        match self {
            LabError::Config(m) => LabError::Config(format!("{key}: {m}")),
            LabError::Numerical(m) => LabError::Numerical(format!("{key}: {m}")),
            other => other,
        }
    }
}

impl fmt::Display for LabError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabError::Io(m) => write!(f, "i/o error: {m}"),
            LabError::Config(m) => write!(f, "config error: {m}"),
            LabError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for LabError {}

impl From<odenet::Error> for LabError {
    fn from(e: odenet::Error) -> Self {
        use odenet::Error as E;
        match e {
            E::Io(_) | E::Parse { .. } => LabError::Io(e.to_string()),
            E::Config(m) | E::Contract(m) | E::Dimension(m) => LabError::Config(m),
            E::Overflow { .. }
            | E::Convergence { .. }
            | E::Divergence { .. }
            | E::SingularReduction { .. }
            | E::Training { .. } => LabError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

/// Maps a library error to a lab error tagged with a config key.
pub(crate) fn keyed<T>(key: &str, r: odenet::Result<T>) -> Result<T, LabError> {
    r.map_err(|e| LabError::from(e).at(key))
}

/// A finished command.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Human-readable summary printed on stdout.
    pub summary: String,
    /// Set when the results were written but should not be trusted as is.
    pub flag: Option<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.flag.is_some() {
            EXIT_FLAGGED
        } else {
            EXIT_OK
        }
    }
}
