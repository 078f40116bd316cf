use thiserror::Error;

use crate::model::{AnnotatorId, SampleId};
use crate::money::Money;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("golden coverage: no golden sample for class {class} ({name})")]
    GoldenCoverage { class: usize, name: String },

    #[error("duplicate sample id {0}")]
    DuplicateSample(SampleId),

    #[error("unknown sample id {0}")]
    UnknownSample(SampleId),

    #[error("unknown annotator {0}")]
    UnknownAnnotator(AnnotatorId),

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("sample {0} has no feature vector")]
    MissingFeatures(SampleId),

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("budget exceeded: requested {requested}, remaining {remaining}")]
    BudgetExceeded { requested: Money, remaining: Money },

    #[error("no affordable annotator: remaining budget {remaining}")]
    NoAffordableAnnotator { remaining: Money },

    #[error("transport failure (retryable): {0}")]
    Transport(String),

    #[error("unparseable model output: {0}")]
    Parse(String),

    #[error("human batch {batch}: {reason}")]
    HumanBatch { batch: String, reason: String },

    #[error("incomplete batch {batch}: missing {missing} row(s)")]
    IncompleteBatch { batch: String, missing: usize },

    #[error("row {row}: label {label:?} is not a known class")]
    UnknownLabel { row: usize, label: String },

    #[error("dispatch token {0} is unknown")]
    UnknownToken(String),

    #[error("task is awaiting human batch {0}")]
    AwaitingHuman(String),

    #[error("task already terminated: {0}")]
    Terminated(String),

    #[error("snapshot checksum mismatch")]
    Checksum,

    #[error("snapshot schema version {found} unsupported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("internal: {0}")]
    Internal(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }
}
