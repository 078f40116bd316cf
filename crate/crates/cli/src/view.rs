//! JSON shapes shared by the HTTP service and `status --json`.

use serde::Serialize;
use serde_json::{json, Value};

use crowdlabel::finance::qa::{confidence_histogram, golden_accuracy};
use crowdlabel::{Money, RunState, StepOutcome, TerminationReason};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub task_id: String,
    pub round: u32,
    pub max_rounds: u32,
    pub samples: usize,
    pub converged: usize,
    pub unconverged: usize,
    pub budget: Money,
    pub spent: Money,
    pub remaining: Money,
    pub golden_accuracy: Option<f64>,
    pub termination: Option<TerminationReason>,
    pub pending_batch: Option<String>,
    pub messages: usize,
    pub records: usize,
}

pub fn summarize(state: &RunState) -> Summary {
    let converged = state.converged_count();
    Summary {
        task_id: state.task.task_id.clone(),
        round: state.round,
        max_rounds: state.task.max_rounds,
        samples: state.samples.len(),
        converged,
        unconverged: state.samples.len() - converged,
        budget: state.ledger.budget,
        spent: state.ledger.spent,
        remaining: state.remaining_budget(),
        golden_accuracy: golden_accuracy(state).0,
        termination: state.termination,
        pending_batch: state.pending.as_ref().map(|p| p.batch_id.clone()),
        messages: state.messages.len(),
        records: state.records.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyPoint {
    pub round: u32,
    pub golden: Option<f64>,
    pub evaluation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundPoint {
    pub round: u32,
    pub annotator_id: Option<String>,
    pub cost: Money,
    pub cumulative_cost: Money,
    pub converged: usize,
    pub unconverged: usize,
}

/// Dashboard payload. Histogram bins split [0, 1] into equal widths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub task_id: String,
    pub round: u32,
    pub accuracy: Vec<AccuracyPoint>,
    pub confidence_histogram: Vec<u64>,
    pub rounds: Vec<RoundPoint>,
    pub confidences: Vec<(String, f64)>,
    pub budget: Money,
    pub spent: Money,
    pub remaining: Money,
}

pub fn metrics(state: &RunState) -> Metrics {
    Metrics {
        task_id: state.task.task_id.clone(),
        round: state.round,
        accuracy: state
            .history
            .iter()
            .map(|h| AccuracyPoint { round: h.round, golden: h.golden_accuracy, evaluation: h.evaluation_accuracy })
            .collect(),
        confidence_histogram: confidence_histogram(state),
        rounds: state
            .history
            .iter()
            .map(|h| RoundPoint {
                round: h.round,
                annotator_id: h.annotator_id.as_ref().map(|a| a.to_string()),
                cost: h.round_cost,
                cumulative_cost: h.cumulative_cost,
                converged: h.converged,
                unconverged: h.unconverged,
            })
            .collect(),
        confidences: state.beliefs.values().map(|b| (b.sample_id.to_string(), b.confidence)).collect(),
        budget: state.ledger.budget,
        spent: state.ledger.spent,
        remaining: state.remaining_budget(),
    }
}

pub fn outcome_json(outcome: &StepOutcome) -> Value {
    match outcome {
        StepOutcome::Completed(s) => json!({"status": "completed", "summary": s}),
        StepOutcome::AwaitingHuman { batch_id } => json!({"status": "awaiting_human", "batch_id": batch_id}),
        StepOutcome::Terminated(r) => json!({"status": "terminated", "reason": r}),
    }
}
