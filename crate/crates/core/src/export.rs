//! Final dataset export: one JSON object per line, ordered by sample id.
//!
//! Field order: `sample_id`, `aggregated_label`, `confidence`, `converged`,
//! `label_history` (list of `{round, annotator_id, label}` in record
//! order), `human_verification_flag`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{AnnotatorId, RunState, SampleId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub round: u32,
    pub annotator_id: AnnotatorId,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub sample_id: SampleId,
    pub aggregated_label: String,
    pub confidence: f64,
    pub converged: bool,
    pub label_history: Vec<HistoryEntry>,
    pub human_verification_flag: bool,
}

pub fn export_records(state: &RunState) -> Vec<ExportRecord> {
    let names = &state.task.class_names;
    let mut history: std::collections::BTreeMap<&SampleId, Vec<HistoryEntry>> = Default::default();
    for r in &state.records {
        history.entry(&r.sample_id).or_default().push(HistoryEntry {
            round: r.round,
            annotator_id: r.annotator_id.clone(),
            label: names[r.label].clone(),
        });
    }
    state
        .beliefs
        .values()
        .map(|b| ExportRecord {
            sample_id: b.sample_id.clone(),
            aggregated_label: names[b.aggregated_label].clone(),
            confidence: b.confidence,
            converged: b.converged,
            label_history: history.remove(&b.sample_id).unwrap_or_default(),
            human_verification_flag: state.verification_flags.contains(&b.sample_id),
        })
        .collect()
}

pub fn export_dataset(state: &RunState) -> Result<String> {
    let mut out = String::new();
    for rec in export_records(state) {
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_export(content: &str) -> Result<Vec<ExportRecord>> {
    content.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
