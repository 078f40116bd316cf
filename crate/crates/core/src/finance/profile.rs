use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{argmax, argmin, AnnotatorId, ClassIndex, ConfusionMatrix, RunState};
use crate::money::Money;

use super::report::{golden_tallies, CostPerCorrect};

/// Derived view of an annotator's track record. Always recomputable from
/// the state; never stored as primary data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub annotator_id: AnnotatorId,
    pub matrix: ConfusionMatrix,
    pub strongest_class: ClassIndex,
    pub weakest_class: ClassIndex,
    pub historical_cost: Money,
    pub golden_accuracy: Option<f64>,
    pub golden_labeled: u64,
    pub cost_per_correct: CostPerCorrect,
    pub rounds_used: Vec<u32>,
}

pub fn build_profile(annotator_id: &AnnotatorId, state: &RunState) -> AnnotatorProfile {
    let matrix = state.matrix_for(annotator_id);
    let diag = matrix.diagonal();
    let historical_cost = state.ledger.spent_by(annotator_id);
    let (correct, labeled) = golden_tallies(state).get(annotator_id).copied().unwrap_or((0, 0));
    let rounds: BTreeSet<u32> = state
        .records
        .iter()
        .filter(|r| &r.annotator_id == annotator_id)
        .map(|r| r.round)
        .chain(state.ledger.entries.iter().filter(|e| &e.annotator_id == annotator_id).map(|e| e.round))
        .collect();
    AnnotatorProfile {
        annotator_id: annotator_id.clone(),
        strongest_class: argmax(&diag),
        weakest_class: argmin(&diag),
        matrix,
        historical_cost,
        golden_accuracy: (labeled > 0).then(|| correct as f64 / labeled as f64),
        golden_labeled: labeled,
        cost_per_correct: CostPerCorrect::new(historical_cost, correct),
        rounds_used: rounds.into_iter().collect(),
    }
}
