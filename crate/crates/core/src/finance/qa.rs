//! Quality checks against the golden set: accuracy, confusion-matrix
//! re-estimation and rule-style guidelines built from golden mistakes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aggregation::estimate_confusion;
use crate::error::Result;
use crate::model::{AnnotatorId, ClassIndex, ConfusionMatrix, RunState, SampleId};

pub const HISTOGRAM_BINS: usize = 10;
const SNIPPET_CHARS: usize = 80;
const SNIPPETS_PER_RULE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub round: u32,
    /// Aggregated-label accuracy over golden samples that have labels.
    pub golden_accuracy: Option<f64>,
    pub golden_evaluated: usize,
    /// Per-annotator accuracy on golden samples labeled this round.
    pub annotator_accuracy: BTreeMap<AnnotatorId, f64>,
    pub converged: usize,
    pub total: usize,
    pub confidence_histogram: Vec<u64>,
    /// Samples whose aggregated label changed during this round.
    pub newly_diverged: Vec<SampleId>,
    /// Accuracy over the whole dataset, when every sample has a reference label.
    pub evaluation_accuracy: Option<f64>,
    pub insufficient_evidence: bool,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaOutcome {
    pub report: QaReport,
    /// Re-estimated matrices; `None` leaves the current ones in place.
    pub matrices: Option<BTreeMap<AnnotatorId, ConfusionMatrix>>,
    /// New guideline text; `None` keeps the current guideline.
    pub guideline: Option<String>,
}

/// Golden samples with at least one label, paired with their aggregated label.
fn golden_outcomes(state: &RunState) -> Vec<(SampleId, ClassIndex, ClassIndex)> {
    let labeled: std::collections::BTreeSet<&SampleId> = state.records.iter().map(|r| &r.sample_id).collect();
    state
        .golden_samples()
        .filter(|s| labeled.contains(&s.id))
        .filter_map(|s| Some((s.id.clone(), s.gold?, state.beliefs.get(&s.id)?.aggregated_label)))
        .collect()
}

/// Aggregated-label accuracy on labeled golden samples and how many were
/// evaluated.
pub fn golden_accuracy(state: &RunState) -> (Option<f64>, usize) {
    let outcomes = golden_outcomes(state);
    if outcomes.is_empty() {
        return (None, 0);
    }
    let correct = outcomes.iter().filter(|(_, g, a)| g == a).count();
    (Some(correct as f64 / outcomes.len() as f64), outcomes.len())
}

/// Whole-dataset accuracy in evaluation mode.
pub fn evaluation_accuracy(state: &RunState) -> Option<f64> {
    let mut correct = 0usize;
    for s in &state.samples {
        let truth = s.reference_label()?;
        if state.beliefs.get(&s.id)?.aggregated_label == truth {
            correct += 1;
        }
    }
    Some(correct as f64 / state.samples.len() as f64)
}

pub fn confidence_histogram(state: &RunState) -> Vec<u64> {
    let mut bins = vec![0u64; HISTOGRAM_BINS];
    for b in state.beliefs.values() {
        let i = ((b.confidence * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        bins[i] += 1;
    }
    bins
}

/// Confusion matrices for every known annotator from all golden records.
pub fn estimate_matrices(state: &RunState) -> Result<BTreeMap<AnnotatorId, ConfusionMatrix>> {
    let classes = state.num_classes();
    let mut pairs: BTreeMap<AnnotatorId, Vec<(ClassIndex, ClassIndex)>> =
        state.task.annotators.iter().map(|a| (a.id.clone(), Vec::new())).collect();
    for r in &state.records {
        let entry = pairs.entry(r.annotator_id.clone()).or_default();
        if let Some(gold) = state.sample(&r.sample_id).and_then(|s| s.gold) {
            entry.push((gold, r.label));
        }
    }
    pairs
        .into_iter()
        .map(|(id, p)| Ok((id.clone(), estimate_confusion(id, classes, &p, state.task.aggregation.smoothing)?)))
        .collect()
}

fn snippet(text: &str) -> String {
    let one_line = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if one_line.chars().count() <= SNIPPET_CHARS {
        one_line
    } else {
        format!("{}...", one_line.chars().take(SNIPPET_CHARS).collect::<String>())
    }
}

/// Rule lines for each confused class pair among golden samples, most
/// frequent first. Empty when there are no mistakes.
pub fn build_guideline(state: &RunState) -> String {
    let mut groups: BTreeMap<(ClassIndex, ClassIndex), Vec<&SampleId>> = BTreeMap::new();
    let outcomes = golden_outcomes(state);
    for (id, gold, agg) in &outcomes {
        if gold != agg {
            groups.entry((*gold, *agg)).or_default().push(id);
        }
    }
    let mut ordered: Vec<_> = groups.into_iter().collect();
    ordered.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    let names = &state.task.class_names;
    let mut out = String::new();
    for ((gold, agg), ids) in ordered {
        out.push_str(&format!(
            "- \"{}\" items are being labeled \"{}\" ({} case{}). Choose \"{}\" only when the item clearly fits it; otherwise consider \"{}\".\n",
            names[gold],
            names[agg],
            ids.len(),
            if ids.len() == 1 { "" } else { "s" },
            names[agg],
            names[gold],
        ));
        for id in ids.iter().filter_map(|id| state.sample(id)?.text.as_deref()).take(SNIPPETS_PER_RULE) {
            out.push_str(&format!("  e.g. \"{}\" belongs to \"{}\"\n", snippet(id), names[gold]));
        }
    }
    out
}

/// Runs the quality step for `round`. `previous` holds each sample's
/// aggregated label before the round's labels were folded in.
pub fn qa_round(state: &RunState, round: u32, previous: &BTreeMap<SampleId, ClassIndex>) -> Result<QaOutcome> {
    let golden_this_round: Vec<_> = state
        .records
        .iter()
        .filter(|r| r.round == round)
        .filter_map(|r| state.sample(&r.sample_id).and_then(|s| s.gold).map(|g| (r, g)))
        .collect();
    let insufficient = golden_this_round.is_empty();

    let mut per_annotator: BTreeMap<AnnotatorId, (usize, usize)> = BTreeMap::new();
    for (r, gold) in &golden_this_round {
        let e = per_annotator.entry(r.annotator_id.clone()).or_default();
        e.1 += 1;
        if r.label == *gold {
            e.0 += 1;
        }
    }
    let annotator_accuracy = per_annotator.into_iter().map(|(k, (c, n))| (k, c as f64 / n as f64)).collect();

    let newly_diverged: Vec<SampleId> = state
        .beliefs
        .values()
        .filter(|b| previous.get(&b.sample_id).is_some_and(|&p| p != b.aggregated_label))
        .map(|b| b.sample_id.clone())
        .collect();
    let (accuracy, evaluated) = golden_accuracy(state);
    let converged = state.converged_count();
    let total = state.samples.len();

    let (matrices, guideline) = if insufficient {
        (None, None)
    } else {
        (Some(estimate_matrices(state)?), Some(build_guideline(state)))
    };

    let summary = if insufficient {
        format!("Round {round}: insufficient evidence, no golden samples were labeled. {converged}/{total} samples converged.")
    } else {
        format!(
            "Round {round}: golden accuracy {:.2}% over {evaluated} samples; {converged}/{total} converged; {} label change(s).",
            accuracy.unwrap_or(0.0) * 100.0,
            newly_diverged.len()
        )
    };
    let report = QaReport {
        round,
        golden_accuracy: accuracy,
        golden_evaluated: evaluated,
        annotator_accuracy,
        converged,
        total,
        confidence_histogram: confidence_histogram(state),
        newly_diverged,
        evaluation_accuracy: evaluation_accuracy(state),
        insufficient_evidence: insufficient,
        summary,
    };
    Ok(QaOutcome { report, matrices, guideline })
}
