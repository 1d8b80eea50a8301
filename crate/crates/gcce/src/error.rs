use std::path::PathBuf;

use nv_gcce_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{failed} of {total} configurations failed at {concentration_ppm} ppm, above the 1% limit")]
    FailureThreshold {
        failed: usize,
        total: usize,
        concentration_ppm: f64,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    /// A self-check that ran to completion but did not pass.
    #[error("check failed: {0}")]
    Check(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit status: 2 for rejected input, 3 for failed computation, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Format { .. } | Error::Json { .. } | Error::Csv { .. } => 2,
            Error::Core(e) => match e {
                CoreError::InvalidParameter { .. }
                | CoreError::InvalidConfiguration(_)
                | CoreError::BathExceedsSupercell { .. }
                | CoreError::GridMismatch
                | CoreError::CoincidentSpins(_)
                | CoreError::ClusterTooLarge { .. }
                | CoreError::BathTooLarge { .. }
                | CoreError::TooManyClusters { .. } => 2,
                _ => 3,
            },
            Error::FailureThreshold { .. } | Error::Check(_) => 3,
            Error::Io { .. } => 1,
        }
    }
}
