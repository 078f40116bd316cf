//! The round loop: planning, dispatch, aggregation, reporting and
//! termination.

pub mod engine;
pub mod planner;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{AnnotatorId, AnnotatorKind, RunState, SampleId};
use crate::money::Money;

pub use engine::{build_request, Engine, StepOutcome};
pub use planner::{plan_round, plan_round_with, PolicyKind, RoundPlan, SchedulerLlm, SchedulingPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    AllConverged,
    BudgetExhausted,
    MaxRounds,
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminationReason::AllConverged => "all_converged",
            TerminationReason::BudgetExhausted => "budget_exhausted",
            TerminationReason::MaxRounds => "max_rounds",
        })
    }
}

/// First matching reason in priority order: all converged, budget
/// exhausted, round cap.
pub fn check_termination(state: &RunState) -> Option<TerminationReason> {
    if state.beliefs.values().all(|b| b.converged) {
        Some(TerminationReason::AllConverged)
    } else if state.remaining_budget() <= Money::ZERO {
        Some(TerminationReason::BudgetExhausted)
    } else if state.round >= state.task.max_rounds {
        Some(TerminationReason::MaxRounds)
    } else {
        None
    }
}

/// Size of the post-run review batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationSize {
    Count(usize),
    Fraction(f64),
}

/// The lowest-confidence samples, converged or not, ties by id.
pub fn flag_final_verification(state: &RunState, size: VerificationSize) -> Vec<SampleId> {
    let n = state.beliefs.len();
    let count = match size {
        VerificationSize::Count(c) => c.min(n),
        VerificationSize::Fraction(f) => crate::slm::select::ceil_fraction(f.clamp(0.0, 1.0), n),
    };
    let mut all: Vec<_> = state.beliefs.values().collect();
    all.sort_by(|a, b| a.confidence.total_cmp(&b.confidence).then_with(|| a.sample_id.cmp(&b.sample_id)));
    let mut out: Vec<SampleId> = all.into_iter().take(count).map(|b| b.sample_id.clone()).collect();
    out.sort();
    out
}

/// One row of the round table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u32,
    pub annotator_id: Option<AnnotatorId>,
    pub kind: Option<AnnotatorKind>,
    pub targets: usize,
    pub labeled: usize,
    pub failures: usize,
    pub round_cost: Money,
    pub cumulative_cost: Money,
    pub remaining: Money,
    pub converged: usize,
    pub unconverged: usize,
    pub golden_accuracy: Option<f64>,
    pub evaluation_accuracy: Option<f64>,
}

/// A round waiting on human labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingRound {
    pub plan: RoundPlan,
    pub batch_id: String,
}
