//! Human annotators and the batch file round trip.
//!
//! Batch file layout: a first line `# batch_id: <id>`, then CSV with the
//! header `sample_id,text,label`. Labels are class names and are left empty
//! on export.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotatorId, AnnotatorKind, ClassIndex, CostModel, SampleId, Usage};
use crate::money::Money;
use crate::transport::{DispatchClient, DispatchItem, DispatchJob, DispatchToken, PollStatus};

use super::{budget_precheck, priced_record, Annotated, AnnotationContext, AnnotationOutcome, AnnotationRequest, Annotator};

const BATCH_PREFIX: &str = "# batch_id:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStatus {
    Open,
    Dispatched,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchItem {
    pub sample_id: SampleId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanBatch {
    pub batch_id: String,
    pub round: u32,
    pub annotator_id: AnnotatorId,
    pub items: Vec<BatchItem>,
    pub status: BatchStatus,
    pub labels: BTreeMap<SampleId, ClassIndex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<DispatchToken>,
    /// Post-run review batch rather than a round dispatch.
    #[serde(default)]
    pub verification: bool,
}

impl HumanBatch {
    pub fn new(batch_id: impl Into<String>, round: u32, annotator_id: AnnotatorId, items: Vec<BatchItem>) -> Self {
        HumanBatch {
            batch_id: batch_id.into(),
            round,
            annotator_id,
            items,
            status: BatchStatus::Open,
            labels: BTreeMap::new(),
            token: None,
            verification: false,
        }
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = &SampleId> {
        self.items.iter().map(|i| &i.sample_id)
    }

    /// Stores labels and marks the batch completed once they cover exactly
    /// the batch's samples.
    pub fn complete(&mut self, labels: BTreeMap<SampleId, ClassIndex>) -> Result<()> {
        let expected: BTreeSet<&SampleId> = self.sample_ids().collect();
        if let Some(extra) = labels.keys().find(|k| !expected.contains(k)) {
            return Err(Error::HumanBatch { batch: self.batch_id.clone(), reason: format!("sample {extra} is not in the batch") });
        }
        let missing = expected.iter().filter(|k| !labels.contains_key(**k)).count();
        if missing > 0 {
            return Err(Error::IncompleteBatch { batch: self.batch_id.clone(), missing });
        }
        self.labels = labels;
        self.status = BatchStatus::Completed;
        Ok(())
    }
}

pub fn batch_id_for(annotator: &AnnotatorId, round: u32) -> String {
    format!("{annotator}-r{round}")
}

/// Renders a batch as a batch file. Labels already present are written as
/// class names.
pub fn export_human_batch(batch: &HumanBatch, class_names: &[String]) -> Result<String> {
    let mut out = format!("{BATCH_PREFIX} {}\n", batch.batch_id);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample_id", "text", "label"])?;
    for item in &batch.items {
        let label = batch.labels.get(&item.sample_id).and_then(|&l| class_names.get(l)).map(String::as_str).unwrap_or("");
        w.write_record([item.sample_id.as_str(), item.text.as_str(), label])?;
    }
    let body = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    out.push_str(&String::from_utf8(body).map_err(|e| Error::Internal(e.to_string()))?);
    Ok(out)
}

/// Reads only the batch id line of a batch file.
pub fn batch_file_id(content: &str) -> Result<String> {
    let first = content.lines().next().unwrap_or("");
    first
        .strip_prefix(BATCH_PREFIX)
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::HumanBatch { batch: String::new(), reason: format!("first line must be `{BATCH_PREFIX} <id>`") })
}

/// Parses a completed batch file against the open or dispatched batches and
/// returns the matching batch, completed. Rows are numbered from 1 after
/// the header.
pub fn import_human_batch(content: &str, batches: &[HumanBatch], class_names: &[String]) -> Result<HumanBatch> {
    let id = batch_file_id(content)?;
    let batch = batches
        .iter()
        .find(|b| b.batch_id == id)
        .ok_or_else(|| Error::HumanBatch { batch: id.clone(), reason: "unknown batch id".into() })?;
    if batch.status == BatchStatus::Completed {
        return Err(Error::HumanBatch { batch: id, reason: "batch is already completed".into() });
    }
    let body = content.split_once('\n').map(|(_, rest)| rest).unwrap_or("");
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::HumanBatch {
            batch: id.clone(),
            reason: format!("missing column {name}"),
        })
    };
    let (id_col, label_col) = (col("sample_id")?, col("label")?);
    let members: BTreeSet<&SampleId> = batch.sample_ids().collect();
    let mut labels = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let sample = SampleId::new(row.get(id_col).unwrap_or("").trim());
        if !members.contains(&sample) {
            return Err(Error::HumanBatch { batch: id, reason: format!("row {row_no}: sample {sample} is not in the batch") });
        }
        let label = row.get(label_col).unwrap_or("").trim();
        if label.is_empty() {
            continue;
        }
        let idx = class_names
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownLabel { row: row_no, label: label.to_string() })?;
        if labels.insert(sample.clone(), idx).is_some() {
            return Err(Error::HumanBatch { batch: id, reason: format!("row {row_no}: sample {sample} appears twice") });
        }
    }
    let mut done = batch.clone();
    done.complete(labels)?;
    Ok(done)
}

/// Turns completed batch labels into priced records, one sample per unit.
pub fn batch_records(batch: &HumanBatch, pricing: &CostModel) -> Result<Vec<crate::model::LabelRecord>> {
    batch
        .labels
        .iter()
        .map(|(id, &label)| priced_record(pricing, &batch.annotator_id, batch.round, id.clone(), label, &Usage::Samples(1)))
        .collect()
}

fn per_sample_projection(pricing: &CostModel, request: &AnnotationRequest) -> Money {
    pricing.cost(&Usage::Samples(request.samples.len() as u64)).unwrap_or(Money::ZERO)
}

fn batch_from(id: &AnnotatorId, request: &AnnotationRequest) -> HumanBatch {
    let mut items: Vec<BatchItem> = request
        .samples
        .iter()
        .map(|s| BatchItem { sample_id: s.sample_id.clone(), text: s.text.clone().unwrap_or_default() })
        .collect();
    items.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    HumanBatch::new(batch_id_for(id, request.round), request.round, id.clone(), items)
}

/// Answers with the dataset's reference labels. Used in simulations.
pub struct OracleHuman {
    id: AnnotatorId,
    pricing: CostModel,
    truth: BTreeMap<SampleId, ClassIndex>,
}

impl OracleHuman {
    pub fn new(id: AnnotatorId, pricing: CostModel, truth: BTreeMap<SampleId, ClassIndex>) -> Self {
        OracleHuman { id, pricing, truth }
    }
}

impl Annotator for OracleHuman {
    fn id(&self) -> &AnnotatorId {
        &self.id
    }

    fn kind(&self) -> AnnotatorKind {
        AnnotatorKind::Human
    }

    fn pricing(&self) -> CostModel {
        self.pricing
    }

    fn projected_cost(&self, request: &AnnotationRequest) -> Money {
        per_sample_projection(&self.pricing, request)
    }

    fn annotate(&mut self, request: &AnnotationRequest, _ctx: &AnnotationContext) -> Result<AnnotationOutcome> {
        budget_precheck(self, request)?;
        let batch = batch_from(&self.id, request);
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for item in &batch.items {
            match self.truth.get(&item.sample_id) {
                Some(&l) => records.push(priced_record(&self.pricing, &self.id, request.round, item.sample_id.clone(), l, &Usage::Samples(1))?),
                None => failures.push((item.sample_id.clone(), "oracle has no reference label".to_string())),
            }
        }
        let usage = Some(Usage::Samples(records.len() as u64));
        Ok(AnnotationOutcome::Done(Annotated { records, failures, usage, overhead: Money::ZERO, demonstrations: None }))
    }
}

/// Exports a batch file and waits for the completed file to be imported.
pub struct OfflineHuman {
    id: AnnotatorId,
    pricing: CostModel,
}

impl OfflineHuman {
    pub fn new(id: AnnotatorId, pricing: CostModel) -> Self {
        OfflineHuman { id, pricing }
    }
}

impl Annotator for OfflineHuman {
    fn id(&self) -> &AnnotatorId {
        &self.id
    }

    fn kind(&self) -> AnnotatorKind {
        AnnotatorKind::Human
    }

    fn pricing(&self) -> CostModel {
        self.pricing
    }

    fn projected_cost(&self, request: &AnnotationRequest) -> Money {
        per_sample_projection(&self.pricing, request)
    }

    fn annotate(&mut self, request: &AnnotationRequest, _ctx: &AnnotationContext) -> Result<AnnotationOutcome> {
        budget_precheck(self, request)?;
        Ok(AnnotationOutcome::Pending(batch_from(&self.id, request)))
    }
}

/// Publishes batches to an external platform and polls for results.
pub struct ExternalHuman {
    id: AnnotatorId,
    pricing: CostModel,
    client: Arc<dyn DispatchClient>,
}

impl ExternalHuman {
    pub fn new(id: AnnotatorId, pricing: CostModel, client: Arc<dyn DispatchClient>) -> Self {
        ExternalHuman { id, pricing, client }
    }
}

impl Annotator for ExternalHuman {
    fn id(&self) -> &AnnotatorId {
        &self.id
    }

    fn kind(&self) -> AnnotatorKind {
        AnnotatorKind::Human
    }

    fn pricing(&self) -> CostModel {
        self.pricing
    }

    fn projected_cost(&self, request: &AnnotationRequest) -> Money {
        per_sample_projection(&self.pricing, request)
    }

    fn annotate(&mut self, request: &AnnotationRequest, _ctx: &AnnotationContext) -> Result<AnnotationOutcome> {
        budget_precheck(self, request)?;
        let mut batch = batch_from(&self.id, request);
        let job = DispatchJob {
            batch_id: batch.batch_id.clone(),
            class_names: request.class_names.clone(),
            items: batch
                .items
                .iter()
                .map(|i| DispatchItem { sample_id: i.sample_id.0.clone(), text: i.text.clone() })
                .collect(),
        };
        batch.token = Some(self.client.submit(&job)?);
        batch.status = BatchStatus::Dispatched;
        Ok(AnnotationOutcome::Pending(batch))
    }

    /// `Ok(None)` while the platform is still working. Partial results are
    /// never returned.
    fn poll(&mut self, batch: &HumanBatch, class_names: &[String]) -> Result<Option<Vec<(SampleId, ClassIndex)>>> {
        if batch.status == BatchStatus::Completed {
            return Ok(Some(batch.labels.iter().map(|(k, &v)| (k.clone(), v)).collect()));
        }
        let token = batch.token.as_ref().ok_or_else(|| Error::HumanBatch {
            batch: batch.batch_id.clone(),
            reason: "batch was never dispatched".into(),
        })?;
        match self.client.poll(token)? {
            PollStatus::Pending => Ok(None),
            PollStatus::Completed { labels } => {
                let mut out = Vec::with_capacity(labels.len());
                for (row, (sample, label)) in labels.into_iter().enumerate() {
                    let idx = class_names
                        .iter()
                        .position(|c| *c == label)
                        .ok_or(Error::UnknownLabel { row: row + 1, label })?;
                    out.push((SampleId(sample), idx));
                }
                out.sort();
                Ok(Some(out))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["pos".into(), "neg".into()]
    }

    fn batch() -> HumanBatch {
        HumanBatch::new(
            "h-r4",
            4,
            "h".into(),
            vec![
                BatchItem { sample_id: "a".into(), text: "first, with comma".into() },
                BatchItem { sample_id: "b".into(), text: "second \"quoted\"".into() },
            ],
        )
    }

    fn fill(file: &str, labels: &[&str]) -> String {
        let mut lines: Vec<String> = file.lines().map(str::to_string).collect();
        for (i, l) in labels.iter().enumerate() {
            lines[i + 2].push_str(l);
        }
        lines.join("\n") + "\n"
    }

    #[test]
    fn round_trip() {
        let b = batch();
        let file = export_human_batch(&b, &names()).unwrap();
        assert!(file.starts_with("# batch_id: h-r4\nsample_id,text,label\n"));
        let done = import_human_batch(&fill(&file, &["neg", "pos"]), &[b.clone()], &names()).unwrap();
        assert_eq!(done.status, BatchStatus::Completed);
        assert_eq!(done.labels[&SampleId::from("a")], 1);
        assert_eq!(done.labels[&SampleId::from("b")], 0);
        assert_eq!(done.items, b.items);
    }

    #[test]
    fn bad_label_names_row() {
        let b = batch();
        let file = export_human_batch(&b, &names()).unwrap();
        let err = import_human_batch(&fill(&file, &["pos", "maybe"]), &[b], &names()).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { row: 2, .. }), "{err}");
    }

    #[test]
    fn missing_row_is_incomplete() {
        let b = batch();
        let file = export_human_batch(&b, &names()).unwrap();
        let filled = fill(&file, &["pos", "neg"]);
        let truncated: Vec<&str> = filled.lines().take(3).collect();
        let err = import_human_batch(&(truncated.join("\n") + "\n"), &[b], &names()).unwrap_err();
        assert!(err.to_string().contains("incomplete batch"), "{err}");
    }

    #[test]
    fn unknown_batch_id() {
        let err = import_human_batch("# batch_id: nope\nsample_id,text,label\n", &[batch()], &names()).unwrap_err();
        assert!(err.to_string().contains("unknown batch id"));
    }
}
