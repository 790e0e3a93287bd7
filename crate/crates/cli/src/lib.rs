//! Configuration parsing, dataset persistence and subcommand drivers for the
//! `ddlqr` binary.

pub mod commands;
pub mod config;
pub mod io;

use std::fmt;
use std::path::{Path, PathBuf};

pub use commands::{run, Command, Invocation, OUT_DIR_ENV};

/// Failure of a command, mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config, bad dataset, or a value the library rejects as input.
    #[error("{0}")]
    Input(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A numerical stage of the pipeline failed.
    #[error("{}", NumericalDisplay(.0))]
    Numerical(#[from] ddlqr::Error),
}

struct NumericalDisplay<'a>(&'a ddlqr::Error);

impl fmt::Display for NumericalDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0.stage() {
            Some(stage) => write!(f, "numerical failure in stage `{stage}`: {}", self.0.root()),
            None => write!(f, "numerical failure: {}", self.0),
        }
    }
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for numerical failures, 2 for input, parse and file errors.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Numerical(_) => 1,
            Self::Input(_) | Self::Io { .. } => 2,
        }
    }
}
