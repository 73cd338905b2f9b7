use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("{path}: malformed file at byte {offset}: {detail}")]
    Parse { path: PathBuf, offset: u64, detail: String },

    #[error("{path}: {detail}")]
    Version { path: PathBuf, detail: String },

    #[error("{path}: {detail}")]
    Report { path: PathBuf, detail: String },

    #[error(transparent)]
    Core(#[from] leantta_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// Short machine-parsable category printed as `error[category]`.
    pub fn category(&self) -> &'static str {
        use leantta_core::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Parse { .. } => "parse",
            CliError::Version { .. } => "version",
            CliError::Report { .. } => "report",
            CliError::Core(e) => match e {
                E::NonFinite { .. } => "non-finite",
                E::Diverged { .. } => "diverged",
                E::Shape { .. } => "shape",
                E::Config(_) => "config",
                E::Empty(_) => "empty",
                E::Unsupported(_) => "unsupported",
            },
        }
    }

    /// 2 usage, 3 file, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::Parse { .. } | CliError::Version { .. } | CliError::Report { .. } => 3,
            CliError::Core(e) if e.is_numeric() => 4,
            CliError::Core(_) => 1,
        }
    }
}
