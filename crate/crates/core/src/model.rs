//! Core data types shared across the engine: task configuration, samples,
//! label records, beliefs, confusion matrices and the full run state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationMethod;
use crate::annotators::human::HumanBatch;
use crate::annotators::prompt::PromptVariantId;
use crate::annotators::slm::TimeMetering;
use crate::error::{Error, Result};
use crate::finance::ledger::CostLedger;
use crate::finance::messages::MessagePool;
use crate::money::Money;
use crate::orchestration::{PendingRound, RoundSummary, SchedulingPolicy, TerminationReason};
use crate::slm::TrainingConfig;

/// Probability floor applied to every belief vector.
pub const PROB_FLOOR: f64 = 1e-6;

pub type ClassIndex = usize;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub String);

impl SampleId {
    pub fn new(id: impl Into<String>) -> Self {
        SampleId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SampleId {
    fn from(s: &str) -> Self {
        SampleId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnnotatorId(pub String);

impl AnnotatorId {
    pub fn new(id: impl Into<String>) -> Self {
        AnnotatorId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AnnotatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AnnotatorId {
    fn from(s: &str) -> Self {
        AnnotatorId(s.to_string())
    }
}

fn default_threshold() -> f64 {
    0.99
}
fn default_human_fraction() -> f64 {
    0.05
}
fn default_pool_fraction() -> f64 {
    0.10
}
fn default_max_rounds() -> u32 {
    20
}

/// An annotation task: classes, budget, convergence target and roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub class_names: Vec<String>,
    pub budget: Money,
    #[serde(default = "default_threshold")]
    pub confidence_threshold: f64,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
    #[serde(default = "default_human_fraction")]
    pub human_batch_fraction: f64,
    #[serde(default = "default_pool_fraction")]
    pub candidate_pool_fraction: f64,
    #[serde(default)]
    pub annotators: Vec<AnnotatorConfig>,
    #[serde(default)]
    pub aggregation: AggregationMethod,
    #[serde(default)]
    pub scheduling: SchedulingPolicy,
    #[serde(default)]
    pub seed: u64,
}

impl Task {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_index(&self, name: &str) -> Option<ClassIndex> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn annotator(&self, id: &AnnotatorId) -> Option<&AnnotatorConfig> {
        self.annotators.iter().find(|a| &a.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorKind {
    Llm,
    SlmProxy,
    Simulated,
    Human,
}

impl AnnotatorKind {
    pub fn is_machine(self) -> bool {
        !matches!(self, AnnotatorKind::Human)
    }
}

impl fmt::Display for AnnotatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnnotatorKind::Llm => "llm",
            AnnotatorKind::SlmProxy => "slm_proxy",
            AnnotatorKind::Simulated => "simulated",
            AnnotatorKind::Human => "human",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorConfig {
    pub id: AnnotatorId,
    pub pricing: CostModel,
    #[serde(flatten)]
    pub settings: AnnotatorSettings,
}

impl AnnotatorConfig {
    pub fn kind(&self) -> AnnotatorKind {
        match self.settings {
            AnnotatorSettings::Llm(_) => AnnotatorKind::Llm,
            AnnotatorSettings::SlmProxy(_) => AnnotatorKind::SlmProxy,
            AnnotatorSettings::Simulated(_) => AnnotatorKind::Simulated,
            AnnotatorSettings::Human(_) => AnnotatorKind::Human,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotatorSettings {
    Llm(LlmSettings),
    SlmProxy(SlmSettings),
    Simulated(SimulatedSettings),
    Human(HumanSettings),
}

fn default_parallelism() -> usize {
    4
}
fn default_retries() -> u32 {
    2
}
fn default_token_env() -> String {
    "CROWDLABEL_LLM_TOKEN".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSettings {
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub prompt_variant: PromptVariantId,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlmSettings {
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub metering: TimeMetering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSettings {
    /// Planted confusion matrix, row = true class.
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Shorthand for a matrix with this diagonal and uniform off-diagonal mass.
    #[serde(default)]
    pub accuracy: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl SimulatedSettings {
    pub fn planted_matrix(&self, classes: usize) -> Result<Vec<Vec<f64>>> {
        match (&self.matrix, self.accuracy) {
            (Some(m), _) => Ok(m.clone()),
            (None, Some(acc)) => Ok(diagonal_matrix(classes, acc)),
            (None, None) => Err(Error::InvalidTask(
                "simulated annotator needs `matrix` or `accuracy`".into(),
            )),
        }
    }
}

/// C×C matrix with `diag` on the diagonal and the rest spread uniformly.
pub fn diagonal_matrix(classes: usize, diag: f64) -> Vec<Vec<f64>> {
    let off = if classes > 1 { (1.0 - diag) / (classes - 1) as f64 } else { 0.0 };
    (0..classes)
        .map(|c| (0..classes).map(|j| if c == j { diag } else { off }).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HumanDispatch {
    /// Returns the dataset's hidden true labels; used for simulation.
    Oracle,
    /// Export a batch file, wait for the completed file to be imported.
    Offline,
    /// Submit/poll against an external crowdsourcing endpoint.
    External { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanSettings {
    pub dispatch: HumanDispatch,
}

/// How an annotator is billed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostModel {
    PerToken { input_per_million: Money, output_per_million: Money },
    PerTime { hourly: Money },
    PerSample { rate: Money },
}

impl CostModel {
    /// Default LLM pricing: $0.60 / 1M input tokens, $2.40 / 1M output tokens.
    pub fn default_llm() -> Self {
        CostModel::PerToken {
            input_per_million: Money::from_cents(60),
            output_per_million: Money::from_cents(240),
        }
    }

    /// SLM GPU time at $0.10/hour.
    pub fn default_slm() -> Self {
        CostModel::PerTime { hourly: Money::from_cents(10) }
    }

    /// Human annotation, simple task: $0.015/sample.
    pub fn human_simple() -> Self {
        CostModel::PerSample { rate: Money::from_micros(15_000) }
    }

    /// Human annotation, expert task: $1.50/sample.
    pub fn human_expert() -> Self {
        CostModel::PerSample { rate: Money::from_cents(150) }
    }

    pub fn rates(&self) -> Vec<Money> {
        match *self {
            CostModel::PerToken { input_per_million, output_per_million } => {
                vec![input_per_million, output_per_million]
            }
            CostModel::PerTime { hourly } => vec![hourly],
            CostModel::PerSample { rate } => vec![rate],
        }
    }

    pub fn cost(&self, usage: &Usage) -> Result<Money> {
        match (*self, *usage) {
            (CostModel::PerToken { input_per_million, output_per_million }, Usage::Tokens { input, output }) => {
                Ok(input_per_million.mul_div(input, 1_000_000) + output_per_million.mul_div(output, 1_000_000))
            }
            (CostModel::PerTime { hourly }, Usage::Seconds(secs)) => {
                if !(secs >= 0.0 && secs.is_finite()) {
                    return Err(Error::Internal(format!("invalid metered time {secs}")));
                }
                Ok(Money::from_micros((hourly.micros() as f64 * secs / 3600.0).round() as i64))
            }
            (CostModel::PerSample { rate }, Usage::Samples(n)) => Ok(rate.mul_div(n, 1)),
            (model, usage) => Err(Error::Internal(format!(
                "usage {usage:?} cannot be priced by {model:?}"
            ))),
        }
    }
}

/// Metered resource consumption of one annotation call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Usage {
    Tokens { input: u64, output: u64 },
    Seconds(f64),
    Samples(u64),
}

impl Usage {
    pub fn combine(self, other: Usage) -> Usage {
        match (self, other) {
            (Usage::Tokens { input: a, output: b }, Usage::Tokens { input: c, output: d }) => {
                Usage::Tokens { input: a + c, output: b + d }
            }
            (Usage::Seconds(a), Usage::Seconds(b)) => Usage::Seconds(a + b),
            (Usage::Samples(a), Usage::Samples(b)) => Usage::Samples(a + b),
            (a, _) => a,
        }
    }
}

/// One unlabeled item. `gold` marks golden-set membership and is never
/// exposed to annotators; `truth` is optional evaluation-only ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: SampleId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<ClassIndex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<ClassIndex>,
}

impl Sample {
    pub fn new(id: impl Into<String>) -> Self {
        Sample { id: SampleId::new(id), text: None, features: None, gold: None, truth: None }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn with_features(mut self, features: Vec<f64>) -> Self {
        self.features = Some(features);
        self
    }

    pub fn with_gold(mut self, gold: ClassIndex) -> Self {
        self.gold = Some(gold);
        self
    }

    pub fn with_truth(mut self, truth: ClassIndex) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn is_golden(&self) -> bool {
        self.gold.is_some()
    }

    /// Best available ground truth: golden label first, then evaluation truth.
    pub fn reference_label(&self) -> Option<ClassIndex> {
        self.gold.or(self.truth)
    }

    /// The annotator-facing projection; carries no label information.
    pub fn view(&self) -> SampleView {
        SampleView { sample_id: self.id.clone(), text: self.text.clone(), features: self.features.clone() }
    }
}

/// What an annotator is allowed to see of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleView {
    pub sample_id: SampleId,
    pub text: Option<String>,
    pub features: Option<Vec<f64>>,
}

/// One annotator's verdict on one sample in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub sample_id: SampleId,
    pub annotator_id: AnnotatorId,
    pub round: u32,
    pub label: ClassIndex,
    pub cost: Money,
    /// Logical timestamp: a run-wide monotone sequence number.
    pub timestamp: u64,
}

/// Per-sample class posterior and convergence state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorBelief {
    pub sample_id: SampleId,
    pub probs: Vec<f64>,
    pub aggregated_label: ClassIndex,
    pub confidence: f64,
    pub converged: bool,
}

impl PosteriorBelief {
    pub fn from_probs(sample_id: SampleId, probs: Vec<f64>, threshold: f64) -> Self {
        let aggregated_label = argmax(&probs);
        let confidence = probs[aggregated_label];
        PosteriorBelief { sample_id, probs, aggregated_label, confidence, converged: confidence >= threshold }
    }

    pub fn uniform(sample_id: SampleId, classes: usize, threshold: f64) -> Self {
        Self::from_probs(sample_id, vec![1.0 / classes as f64; classes], threshold)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Normalizes `v` to sum 1 and enforces a floor of `floor` on every entry,
/// rescaling the unfloored entries so the total stays exactly 1.
pub fn floor_normalize(v: &mut [f64], floor: f64) -> Result<()> {
    let total: f64 = v.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Internal(format!("cannot normalize vector with total {total}")));
    }
    v.iter_mut().for_each(|x| *x /= total);
    let mut pinned = vec![false; v.len()];
    loop {
        let mut changed = false;
        for (x, p) in v.iter_mut().zip(pinned.iter_mut()) {
            if !*p && *x < floor {
                *x = floor;
                *p = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let pinned_mass = floor * pinned.iter().filter(|&&p| p).count() as f64;
        let free: f64 = v.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(x, _)| x).sum();
        if free <= 0.0 {
            break;
        }
        let scale = (1.0 - pinned_mass) / free;
        v.iter_mut().zip(&pinned).filter(|(_, &p)| !p).for_each(|(x, _)| *x *= scale);
    }
    Ok(())
}

/// Per-annotator reliability model: `rows[c][j] = P(report j | true c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub annotator_id: AnnotatorId,
    pub rows: Vec<Vec<f64>>,
    /// Golden samples observed per true class.
    pub support: Vec<u64>,
}

/// Diagonal of the matrix assumed for annotators without golden history.
pub const DEFAULT_DIAGONAL: f64 = 0.7;

impl ConfusionMatrix {
    pub fn default_for(annotator_id: AnnotatorId, classes: usize) -> Self {
        ConfusionMatrix {
            annotator_id,
            rows: diagonal_matrix(classes, DEFAULT_DIAGONAL),
            support: vec![0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.rows.len()
    }

    pub fn likelihood(&self, true_class: ClassIndex, reported: ClassIndex) -> f64 {
        self.rows[true_class][reported]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.len()).map(|c| self.rows[c][c]).collect()
    }
}

/// The full, serializable state of one annotation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub task: Task,
    /// Sorted by sample id.
    pub samples: Vec<Sample>,
    pub records: Vec<LabelRecord>,
    pub beliefs: BTreeMap<SampleId, PosteriorBelief>,
    pub matrices: BTreeMap<AnnotatorId, ConfusionMatrix>,
    pub ledger: CostLedger,
    pub messages: MessagePool,
    /// Last completed round; 0 before the first round.
    pub round: u32,
    pub class_prior: Vec<f64>,
    pub converged_at: BTreeMap<SampleId, u32>,
    pub history: Vec<RoundSummary>,
    pub human_batches: Vec<HumanBatch>,
    /// Samples already routed to a human annotator.
    pub human_sent: BTreeSet<SampleId>,
    pub pending: Option<PendingRound>,
    pub demonstrations: Vec<crate::annotators::Demonstration>,
    pub guideline: String,
    pub verification_flags: BTreeSet<SampleId>,
    pub termination: Option<TerminationReason>,
    pub next_seq: u64,
}

impl RunState {
    pub fn num_classes(&self) -> usize {
        self.task.num_classes()
    }

    pub fn sample(&self, id: &SampleId) -> Option<&Sample> {
        self.samples.binary_search_by(|s| s.id.cmp(id)).ok().map(|i| &self.samples[i])
    }

    pub fn golden_samples(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.is_golden())
    }

    pub fn unconverged(&self) -> Vec<SampleId> {
        self.beliefs.values().filter(|b| !b.converged).map(|b| b.sample_id.clone()).collect()
    }

    pub fn converged_count(&self) -> usize {
        self.beliefs.values().filter(|b| b.converged).count()
    }

    /// Matrix used for aggregation: the estimated one, else the default.
    pub fn matrix_for(&self, id: &AnnotatorId) -> ConfusionMatrix {
        self.matrices
            .get(id)
            .cloned()
            .unwrap_or_else(|| ConfusionMatrix::default_for(id.clone(), self.num_classes()))
    }

    pub fn records_for<'a>(&'a self, id: &'a SampleId) -> impl Iterator<Item = &'a LabelRecord> + 'a {
        self.records.iter().filter(move |r| &r.sample_id == id)
    }

    pub fn remaining_budget(&self) -> Money {
        self.ledger.remaining()
    }

    pub fn max_record_round(&self) -> u32 {
        self.records.iter().map(|r| r.round).max().unwrap_or(0)
    }
}

/// Validates a task and dataset and builds the round-0 state.
pub fn validate_task(task: Task, mut samples: Vec<Sample>) -> Result<RunState> {
    let classes = task.num_classes();
    if classes < 2 {
        return Err(Error::InvalidTask(format!("need at least 2 classes, got {classes}")));
    }
    let mut seen_names = BTreeSet::new();
    for name in &task.class_names {
        if !seen_names.insert(name) {
            return Err(Error::InvalidTask(format!("duplicate class name {name:?}")));
        }
    }
    if task.budget.micros() <= 0 {
        return Err(Error::InvalidTask("budget must be positive".into()));
    }
    if !(task.confidence_threshold > 0.0 && task.confidence_threshold <= 1.0) {
        return Err(Error::InvalidTask(format!(
            "confidence threshold {} outside (0, 1]",
            task.confidence_threshold
        )));
    }
    if task.max_rounds == 0 {
        return Err(Error::InvalidTask("max_rounds must be positive".into()));
    }
    let (h, p) = (task.human_batch_fraction, task.candidate_pool_fraction);
    if !(h > 0.0 && h <= p && p <= 1.0) {
        return Err(Error::InvalidTask(format!(
            "fraction out of range: need 0 < human_batch_fraction ({h}) <= candidate_pool_fraction ({p}) <= 1"
        )));
    }
    task.aggregation.validate()?;
    let mut roster_ids = BTreeSet::new();
    for a in &task.annotators {
        if !roster_ids.insert(&a.id) {
            return Err(Error::InvalidTask(format!("duplicate annotator id {}", a.id)));
        }
        validate_annotator(a, classes)?;
    }

    if samples.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    for pair in samples.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(Error::DuplicateSample(pair[0].id.clone()));
        }
    }
    let mut feature_dim = None;
    for s in &samples {
        for label in [s.gold, s.truth].into_iter().flatten() {
            if label >= classes {
                return Err(Error::ClassOutOfRange { index: label, classes });
            }
        }
        if let Some(f) = &s.features {
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidTask(format!("sample {} has non-finite features", s.id)));
            }
            match feature_dim {
                None => feature_dim = Some(f.len()),
                Some(d) if d != f.len() => {
                    return Err(Error::InvalidTask(format!(
                        "sample {} has {} features, expected {d}",
                        s.id,
                        f.len()
                    )))
                }
                _ => {}
            }
        }
    }

    let mut counts = vec![0u64; classes];
    for g in samples.iter().filter_map(|s| s.gold) {
        counts[g] += 1;
    }
    let total: u64 = counts.iter().sum();
    let class_prior = if total == 0 {
        vec![1.0 / classes as f64; classes]
    } else {
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::GoldenCoverage { class: missing, name: task.class_names[missing].clone() });
        }
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };

    let beliefs = samples
        .iter()
        .map(|s| (s.id.clone(), PosteriorBelief::uniform(s.id.clone(), classes, task.confidence_threshold)))
        .collect();
    let ledger = CostLedger::new(task.budget);
    Ok(RunState {
        task,
        samples,
        records: Vec::new(),
        beliefs,
        matrices: BTreeMap::new(),
        ledger,
        messages: MessagePool::default(),
        round: 0,
        class_prior,
        converged_at: BTreeMap::new(),
        history: Vec::new(),
        human_batches: Vec::new(),
        human_sent: BTreeSet::new(),
        pending: None,
        demonstrations: Vec::new(),
        guideline: String::new(),
        verification_flags: BTreeSet::new(),
        termination: None,
        next_seq: 0,
    })
}

fn validate_annotator(a: &AnnotatorConfig, classes: usize) -> Result<()> {
    if a.pricing.rates().iter().any(|r| r.is_negative()) {
        return Err(Error::InvalidTask(format!("annotator {}: negative rate", a.id)));
    }
    let pricing_ok = match (&a.settings, a.pricing) {
        (AnnotatorSettings::Llm(_), CostModel::PerToken { .. }) => true,
        (AnnotatorSettings::SlmProxy(_), CostModel::PerTime { .. }) => true,
        (AnnotatorSettings::Human(_), CostModel::PerSample { .. }) => true,
        // Simulated annotators stand in for any source and may use any pricing.
        (AnnotatorSettings::Simulated(_), _) => true,
        _ => false,
    };
    if !pricing_ok {
        return Err(Error::InvalidTask(format!(
            "annotator {}: pricing {:?} does not match kind {}",
            a.id,
            a.pricing,
            a.kind()
        )));
    }
    if let AnnotatorSettings::Simulated(sim) = &a.settings {
        let m = sim.planted_matrix(classes)?;
        let shape_ok = m.len() == classes && m.iter().all(|r| r.len() == classes);
        let rows_ok = m.iter().all(|r| {
            r.iter().all(|&x| (0.0..=1.0).contains(&x)) && (r.iter().sum::<f64>() - 1.0).abs() < 1e-9
        });
        if !shape_ok || !rows_ok {
            return Err(Error::InvalidTask(format!(
                "annotator {}: planted matrix must be {classes}x{classes} with rows summing to 1",
                a.id
            )));
        }
    }
    if let AnnotatorSettings::Llm(l) = &a.settings {
        if l.parallelism == 0 {
            return Err(Error::InvalidTask(format!("annotator {}: parallelism must be >= 1", a.id)));
        }
    }
    Ok(())
}
