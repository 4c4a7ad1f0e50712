//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing required column '{0}' in dataset header")]
    MissingColumn(String),

    #[error("invalid dataset rows: {0}")]
    InvalidRows(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("split ratios must sum to 1 (got {0})")]
    BadSplitRatios(f64),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("vocabulary file is malformed: {0}")]
    BadVocabulary(String),

    #[error("token id {id} out of range (vocabulary size {size})")]
    IdOutOfRange { id: u32, size: u32 },

    #[error("bad model configuration: {0}")]
    BadModelConfig(String),

    #[error("sequence length {got} does not match model input length {expected}")]
    SequenceLengthMismatch { got: usize, expected: usize },

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("checkpoint error in {path}: {reason}")]
    BadCheckpoint { path: String, reason: String },

    #[error("checkpoint holds a {found} model, expected {expected}")]
    ArchitectureMismatch { found: String, expected: String },

    #[error("exact Shapley limited to {limit} non-pad tokens, input has {got}")]
    TooManyActivePositions { limit: usize, got: usize },

    #[error("{context}: produced a non-finite value")]
    NonFinite { context: String },

    #[error("word score count {scores} does not match non-pad position count {positions}")]
    AlignmentMismatch { scores: usize, positions: usize },

    #[error("attribution has {got} scores, sequence has {expected} positions")]
    ScoreLengthMismatch { got: usize, expected: usize },

    #[error("invalid evaluation configuration: {0}")]
    BadEvalConfig(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
