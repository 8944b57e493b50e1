//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shape disagreement. `context` names the offending
    /// layer or operation.
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    /// Invalid argument or configuration value detected up front.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Schedule queried outside its evaluation domain.
    #[error("schedule step {t} outside valid range [{lo}, {hi}]")]
    ScheduleRange { t: i64, lo: i64, hi: i64 },

    /// `backward` called twice on the same recorded graph.
    #[error("graph already consumed by backward; run a new forward pass")]
    GraphConsumed,

    /// A NaN or infinity appeared where finite values are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Malformed or unreadable checkpoint file.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Experiment configuration problem (parse failure, missing path, bad value).
    #[error("config: {0}")]
    Config(String),

    /// Perceptual-hash misuse (tag mismatch, wrong channel count, bad hex).
    #[error("hash: {0}")]
    Hash(String),

    /// Dataset loading or generation problem.
    #[error("dataset: {0}")]
    Dataset(String),

    /// A pipeline stage failed; the stage name is preserved for diagnostics.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
