//! Fully synthetic runs: Gaussian-blob features, hidden true labels, a
//! stratified golden set and a roster of planted-matrix annotators plus a
//! human oracle.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    validate_task, AnnotatorConfig, AnnotatorSettings, CostModel, HumanDispatch, HumanSettings, RunState, Sample,
    SimulatedSettings, Task,
};
use crate::money::Money;
use crate::orchestration::RoundSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSpec {
    pub id: String,
    pub accuracy: f64,
    pub price_per_sample: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub task_id: String,
    pub samples: usize,
    pub classes: usize,
    pub feature_dim: usize,
    /// Distance between blob centers relative to the unit noise.
    pub separation: f64,
    pub golden_fraction: f64,
    pub budget: Money,
    pub confidence_threshold: f64,
    pub human_batch_fraction: f64,
    pub candidate_pool_fraction: f64,
    pub max_rounds: u32,
    pub simulated: Vec<SimulatedSpec>,
    /// Per-sample price of the oracle human; `None` leaves humans out.
    pub human_price: Option<Money>,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        let sim = |id: &str, accuracy, micros| SimulatedSpec {
            id: id.into(),
            accuracy,
            price_per_sample: Money::from_micros(micros),
        };
        Scenario {
            task_id: "simulated".into(),
            samples: 1000,
            classes: 3,
            feature_dim: 8,
            separation: 3.0,
            golden_fraction: 0.05,
            budget: Money::from_cents(10_000),
            confidence_threshold: 0.99,
            human_batch_fraction: 0.05,
            candidate_pool_fraction: 0.10,
            max_rounds: 20,
            simulated: vec![sim("sim-075", 0.75, 200), sim("sim-085", 0.85, 500), sim("sim-095", 0.95, 1_000)],
            human_price: Some(Money::from_micros(15_000)),
            seed: 7,
        }
    }
}

impl Scenario {
    pub fn from_toml(content: &str) -> Result<Self> {
        toml::from_str(content).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes).map(|c| format!("class_{c}")).collect()
    }

    pub fn task(&self) -> Task {
        let mut annotators: Vec<AnnotatorConfig> = self
            .simulated
            .iter()
            .enumerate()
            .map(|(i, s)| AnnotatorConfig {
                id: s.id.as_str().into(),
                pricing: CostModel::PerSample { rate: s.price_per_sample },
                settings: AnnotatorSettings::Simulated(SimulatedSettings {
                    matrix: None,
                    accuracy: Some(s.accuracy),
                    seed: i as u64 + 1,
                }),
            })
            .collect();
        if let Some(rate) = self.human_price {
            annotators.push(AnnotatorConfig {
                id: "human".into(),
                pricing: CostModel::PerSample { rate },
                settings: AnnotatorSettings::Human(HumanSettings { dispatch: HumanDispatch::Oracle }),
            });
        }
        Task {
            task_id: self.task_id.clone(),
            class_names: self.class_names(),
            budget: self.budget,
            confidence_threshold: self.confidence_threshold,
            max_rounds: self.max_rounds,
            human_batch_fraction: self.human_batch_fraction,
            candidate_pool_fraction: self.candidate_pool_fraction,
            annotators,
            aggregation: Default::default(),
            scheduling: Default::default(),
            seed: self.seed,
        }
    }

    /// Samples with hidden truth; golden samples are spread round-robin
    /// over the classes so every class is covered.
    pub fn dataset(&self) -> Result<Vec<Sample>> {
        if self.classes < 2 || self.samples < self.classes {
            return Err(Error::InvalidTask("scenario needs >= 2 classes and at least one sample per class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, 1.0).map_err(|e| Error::Internal(e.to_string()))?;
        let centers: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| {
                let v: Vec<f64> = (0..self.feature_dim).map(|_| noise.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                v.into_iter().map(|x| x / norm * self.separation).collect()
            })
            .collect();
        let width = self.samples.to_string().len().max(4);
        let mut samples: Vec<Sample> = (0..self.samples)
            .map(|i| {
                // first C samples pin one per class
                let c = if i < self.classes { i } else { rng.random_range(0..self.classes) };
                let features = centers[c].iter().map(|m| m + noise.sample(&mut rng)).collect();
                Sample::new(format!("s{i:0width$}"))
                    .with_text(format!("synthetic item {i}"))
                    .with_features(features)
                    .with_truth(c)
            })
            .collect();
        let golden = ((self.golden_fraction * self.samples as f64).ceil() as usize).clamp(self.classes, self.samples);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.classes];
        for (i, s) in samples.iter().enumerate() {
            by_class[s.truth.expect("set above")].push(i);
        }
        let mut picked = 0;
        let mut depth = 0;
        while picked < golden {
            for list in &by_class {
                if picked < golden {
                    if let Some(&i) = list.get(depth) {
                        samples[i].gold = samples[i].truth;
                        picked += 1;
                    }
                }
            }
            depth += 1;
        }
        Ok(samples)
    }

    pub fn build(&self) -> Result<RunState> {
        validate_task(self.task(), self.dataset()?)
    }
}

/// Round table with columns Round, Annotator, Acc. %, #Unc., Cost $.
/// Accuracy is against the evaluation truth when every sample has one,
/// otherwise golden-set accuracy.
pub fn format_round_table(history: &[RoundSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>5}  {:<12}  {:>7}  {:>6}  {:>8}", "Round", "Annotator", "Acc. %", "#Unc.", "Cost $");
    for r in history {
        let acc = r
            .evaluation_accuracy
            .or(r.golden_accuracy)
            .map(|a| format!("{:.2}", a * 100.0))
            .unwrap_or_else(|| "-".into());
        let who = r.annotator_id.as_ref().map(|a| a.as_str()).unwrap_or("-");
        let _ = writeln!(out, "{:>5}  {:<12}  {:>7}  {:>6}  {:>8}", r.round, who, acc, r.unconverged, r.round_cost);
    }
    if let Some(last) = history.last() {
        let _ = writeln!(out, "total cost: {}  converged: {}", last.cumulative_cost, last.converged);
    }
    out
}
