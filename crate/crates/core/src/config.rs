//! Task configuration (TOML) and dataset files (JSON lines).
//!
//! ```toml
//! task_id = "demo"
//! class_names = ["neg", "pos"]
//! budget = "10.00"
//! dataset = "data.jsonl"   # relative to this file
//!
//! [[annotators]]
//! id = "sim-a"
//! kind = "simulated"
//! accuracy = 0.85
//! pricing = { kind = "per_sample", rate = "0.001" }
//! ```
//!
//! Each dataset line is `{"id": "...", "text": "...", "features": [..],
//! "gold": <index or class name>, "truth": <index or class name>}`; every
//! field except `id` is optional.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_task, ClassIndex, RunState, Sample, SampleId, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    #[serde(flatten)]
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelRef {
    Index(ClassIndex),
    Name(String),
}

impl LabelRef {
    pub fn resolve(&self, class_names: &[String]) -> Result<ClassIndex> {
        match self {
            LabelRef::Index(i) if *i < class_names.len() => Ok(*i),
            LabelRef::Index(i) => Err(Error::ClassOutOfRange { index: *i, classes: class_names.len() }),
            LabelRef::Name(n) => class_names
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::Config(format!("unknown class name {n:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub id: String,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub features: Option<Vec<f64>>,
    #[serde(default)]
    pub gold: Option<LabelRef>,
    #[serde(default)]
    pub truth: Option<LabelRef>,
}

pub fn parse_task_toml(content: &str) -> Result<TaskFile> {
    toml::from_str(content).map_err(|e| Error::Config(e.to_string()))
}

impl DatasetRow {
    pub fn into_sample(self, class_names: &[String]) -> Result<Sample> {
        Ok(Sample {
            id: SampleId(self.id),
            text: self.text,
            features: self.features,
            gold: self.gold.map(|g| g.resolve(class_names)).transpose()?,
            truth: self.truth.map(|g| g.resolve(class_names)).transpose()?,
        })
    }
}

pub fn parse_dataset(content: &str, class_names: &[String]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (n, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: DatasetRow =
            serde_json::from_str(line).map_err(|e| Error::Config(format!("dataset line {}: {e}", n + 1)))?;
        out.push(row.into_sample(class_names)?);
    }
    Ok(out)
}

pub fn dataset_to_jsonl(samples: &[Sample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        let row = DatasetRow {
            id: s.id.0.clone(),
            text: s.text.clone(),
            features: s.features.clone(),
            gold: s.gold.map(LabelRef::Index),
            truth: s.truth.map(LabelRef::Index),
        };
        out.push_str(&serde_json::to_string(&row)?);
        out.push('\n');
    }
    Ok(out)
}

/// Reads a task file and its dataset, then validates them into a round-0 state.
pub fn load_config(path: &Path) -> Result<RunState> {
    let content = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let file = parse_task_toml(&content)?;
    let dataset = file.dataset.ok_or_else(|| Error::Config("task file has no `dataset` entry".into()))?;
    let dataset = if dataset.is_relative() { path.parent().unwrap_or(Path::new(".")).join(dataset) } else { dataset };
    let rows = fs::read_to_string(&dataset).map_err(|e| Error::Config(format!("{}: {e}", dataset.display())))?;
    let samples = parse_dataset(&rows, &file.task.class_names)?;
    validate_task(file.task, samples)
}
