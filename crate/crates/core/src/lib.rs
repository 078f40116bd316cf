//! Multi-source annotation orchestration.
//!
//! Unlabeled samples are dispatched round by round to LLM, SLM-proxy,
//! simulated and human annotators. Their labels are merged with
//! confusion-matrix-aware truth inference, and a quality/finance/scheduling
//! loop decides who labels what next until every sample is confident, the
//! budget runs out or the round cap is hit.

pub mod aggregation;
pub mod annotators;
pub mod config;
pub mod error;
pub mod export;
pub mod finance;
pub mod model;
pub mod money;
pub mod orchestration;
pub mod persist;
pub mod scenario;
pub mod selection;
pub mod slm;
pub mod transport;

pub use error::{Error, Result};
pub use model::{
    validate_task, AnnotatorConfig, AnnotatorId, AnnotatorKind, ClassIndex, ConfusionMatrix, CostModel, LabelRecord,
    PosteriorBelief, RunState, Sample, SampleId, Task, Usage,
};
pub use money::Money;
pub use orchestration::{Engine, StepOutcome, TerminationReason};
