use std::path::{Path, PathBuf};

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Process exit status by failure class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Success = 0,
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("training aborted at step {step}: {reason}; last finite report: {last}")]
    Diverged { step: usize, reason: String, last: String },
    #[error(transparent)]
    Core(#[from] holo_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> ExitKind {
        use holo_core::Error as E;
        match self {
            CliError::Usage(_) => ExitKind::Usage,
            CliError::Data(_) | CliError::Io { .. } => ExitKind::Data,
            CliError::Diverged { .. } => ExitKind::Numeric,
            CliError::Core(e) => match e {
                E::Config(_) | E::Domain(_) => ExitKind::Usage,
                E::Numeric(_) | E::Dimension { .. } | E::Contract(_) => ExitKind::Numeric,
                E::Consistency(_)
                | E::CorruptFile { .. }
                | E::UnmappedLabel { .. }
                | E::DegeneratePartition { .. }
                | E::DegenerateMask { .. }
                | E::UnknownClass(_)
                | E::Version { .. }
                | E::Io { .. }
                | E::Json(_) => ExitKind::Data,
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind() as i32
    }
}
