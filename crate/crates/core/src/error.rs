use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("unknown category directory {name:?} (expected one of the six taxonomy names)")]
    UnknownCategory { name: String },

    #[error("failed to decode image {sample_id}: {reason}")]
    Decode { sample_id: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid label: {0}")]
    Label(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unknown backbone {0:?}")]
    UnknownBackbone(String),

    #[error(
        "pretrained weights for {backbone} not found at {path}; export the ImageNet weights \
         for this architecture into that directory (or set NAILGUARD_WEIGHTS) and provide a \
         backbone adapter through a WeightsProvider"
    )]
    MissingWeights { backbone: String, path: PathBuf },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Epochs completed before the failure.
        history: Box<crate::training::TrainingHistory>,
    },

    #[error("all {} sweep runs failed", leaderboard.len())]
    SweepFailed { leaderboard: Vec<crate::training::LeaderboardRow> },

    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
