use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] dialpolicy::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact {path}: run `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error("stale artifact {path}: {reason}")]
    Stale { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const CHECKPOINT: u8 = 4;
    pub const IO: u8 = 5;
    pub const DIVERGENCE: u8 = 6;
    pub const INPUT: u8 = 7;
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        use dialpolicy::Error as E;
        match self {
            Self::Config(_) | Self::MissingArtifact { .. } | Self::Core(E::Config(_)) => exit::CONFIG,
            Self::Stale { .. } | Self::Core(E::Checkpoint(_)) => exit::CHECKPOINT,
            Self::Io { .. } | Self::Csv(_) | Self::Json(_) | Self::Core(E::Io(_)) => exit::IO,
            Self::Core(E::TrainingDivergence(_)) => exit::DIVERGENCE,
            Self::Core(E::RejectedInput(_) | E::Schema(_)) => exit::INPUT,
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| HarnessError::Io {
            path: path.into(),
            source,
        })
    }
}
