//! Error types shared across the workspace.

use std::path::PathBuf;

/// Errors produced by any pipeline stage.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration (bad enum value, T = 0, empty team, unknown flavor, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Internal consistency violation (wrong round index, length mismatch, ...).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Protocol misuse between stages (missing leader output, empty previous solution, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Data-generation failure (insufficient draws, pairing bug, exhausted script, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite or otherwise invalid numeric input.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Answer cannot be normalized (e.g. empty).
    #[error("normalization error: {0}")]
    Normalization(String),

    /// Transport or server failure after exhausting retries.
    #[error("backend error after {attempts} attempt(s): {message}")]
    Backend { message: String, attempts: u32 },

    /// Episode-level failure, tagged with the failing role and round.
    #[error("episode error ({role}, round {round}): {source}")]
    Episode {
        role: String,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    /// JSONL file ends in a partial record.
    #[error("truncated jsonl in {path} at byte offset {offset}")]
    TruncatedJsonl { path: PathBuf, offset: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the episode role/round that produced it.
    pub fn in_episode(self, role: impl Into<String>, round: usize) -> Self {
        Error::Episode {
            role: role.into(),
            round,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
