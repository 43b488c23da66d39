//! CLI error type and exit-code mapping.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation: unknown flags, missing arguments.
    #[error("usage: {0}")]
    Usage(String),

    /// Malformed input data, unreadable files, invalid configuration.
    #[error("{0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] morphgen_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> CliError {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 0 success, 2 usage, 3 data error, 4 numeric
    /// divergence.
    pub fn exit_code(&self) -> i32 {
        use morphgen_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::Data(_) => 3,
            CliError::Core(e) => match e {
                E::Divergence { .. }
                | E::NonFinite { .. }
                | E::TrainingDiverged { .. }
                | E::SamplingDiverged { .. }
                | E::LineSearchStall { .. } => 4,
                _ => 3,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
