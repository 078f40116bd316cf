//! Small-model annotator: a linear softmax classifier over precomputed
//! feature vectors, trained on noisy aggregated labels with loss-based
//! clean/noisy partitioning.

pub mod gmm;
pub mod kmedoids;
pub mod select;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gmm::{fit_gmm_1d, GmmPartition};
pub use kmedoids::kmedoids_demos;
pub use select::select_class_top_k;

use crate::error::{Error, Result};
use crate::model::{argmax, ClassIndex, SampleId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Upper bound on epochs (at most 50).
    pub epochs: usize,
    pub warm_up_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Epochs without improvement of the training loss before stopping.
    pub patience: usize,
    /// Epochs over which the noisy-set loss weight ramps from 0 to 1.
    pub ramp_epochs: usize,
    pub gmm_max_iters: usize,
    /// Run loss-based clean/noisy filtering after warm-up.
    pub filter: bool,
    /// Fraction of lowest-loss samples per class kept for demonstrations.
    pub demo_fraction: f64,
    /// Medoids per class in the demonstration pool.
    pub demo_medoids: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 50,
            warm_up_epochs: 3,
            learning_rate: 0.05,
            weight_decay: 0.01,
            batch_size: 32,
            patience: 5,
            ramp_epochs: 10,
            gmm_max_iters: 10,
            filter: true,
            demo_fraction: 0.20,
            demo_medoids: 5,
            seed: 0,
        }
    }
}

/// Linear softmax model: `p = softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlmModel {
    /// C × d
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl SlmModel {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        SlmModel { weights: vec![vec![0.0; dim]; classes], bias: vec![0.0; classes] }
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b)
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn predict(&self, x: &[f64]) -> ClassIndex {
        argmax(&self.logits(x))
    }

    pub fn sample_loss(&self, x: &[f64], label: ClassIndex) -> f64 {
        let z = self.logits(x);
        log_sum_exp(&z) - z[label]
    }

    /// Weighted mean cross-entropy and its gradient with respect to
    /// `(weights, bias)`. Weights of zero skip a sample.
    pub fn loss_and_grad(
        &self,
        xs: &[&[f64]],
        labels: &[ClassIndex],
        sample_weights: &[f64],
    ) -> (f64, Vec<Vec<f64>>, Vec<f64>) {
        let classes = self.classes();
        let dim = self.weights.first().map_or(0, |w| w.len());
        let mut gw = vec![vec![0.0; dim]; classes];
        let mut gb = vec![0.0; classes];
        let mut loss = 0.0;
        let norm: f64 = sample_weights.iter().sum();
        if norm <= 0.0 {
            return (0.0, gw, gb);
        }
        for ((x, &y), &w) in xs.iter().zip(labels).zip(sample_weights) {
            if w == 0.0 {
                continue;
            }
            let z = self.logits(x);
            let lse = log_sum_exp(&z);
            loss += w * (lse - z[y]);
            for c in 0..classes {
                let g = w * ((z[c] - lse).exp() - if c == y { 1.0 } else { 0.0 });
                gb[c] += g;
                for (gwj, xj) in gw[c].iter_mut().zip(x.iter()) {
                    *gwj += g * xj;
                }
            }
        }
        gw.iter_mut().flatten().for_each(|g| *g /= norm);
        gb.iter_mut().for_each(|g| *g /= norm);
        (loss / norm, gw, gb)
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().flatten().chain(&self.bias).all(|x| x.is_finite())
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

/// The representation used for selection: the feature vector itself.
pub fn embed(features: &[f64]) -> Vec<f64> {
    features.to_vec()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SlmModel,
    /// Final per-sample cross-entropy against the given labels.
    pub losses: Vec<f64>,
    /// Partition of the final losses (absent when filtering is off).
    pub partition: Option<GmmPartition>,
    /// Final clean mask: everything when filtering is off.
    pub clean: Vec<bool>,
    pub epochs_run: usize,
}

/// A sample counts as noisy only when the mixture puts it in the high-loss
/// component and the model gives its label less than chance probability.
/// The second condition stops a unimodal loss distribution from being split
/// into a spurious noisy half.
pub fn clean_mask(partition: &GmmPartition, losses: &[f64], classes: usize) -> Vec<bool> {
    let chance = (classes.max(2) as f64).ln();
    partition.clean.iter().zip(losses).map(|(&c, &l)| c || l <= chance).collect()
}

struct AdamW {
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
    t: i32,
}

impl AdamW {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(classes: usize, dim: usize) -> Self {
        AdamW {
            m_w: vec![vec![0.0; dim]; classes],
            v_w: vec![vec![0.0; dim]; classes],
            m_b: vec![0.0; classes],
            v_b: vec![0.0; classes],
            t: 0,
        }
    }

    fn step(&mut self, model: &mut SlmModel, gw: &[Vec<f64>], gb: &[f64], lr: f64, decay: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64, decay: f64| {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * decay * *p;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        };
        for c in 0..model.weights.len() {
            for j in 0..model.weights[c].len() {
                update(&mut model.weights[c][j], &mut self.m_w[c][j], &mut self.v_w[c][j], gw[c][j], decay);
            }
            update(&mut model.bias[c], &mut self.m_b[c], &mut self.v_b[c], gb[c], 0.0);
        }
    }
}

/// Trains the proxy on noisy labels.
///
/// Warm-up epochs use every sample. Afterwards each epoch fits a two-component
/// GMM to the current per-sample losses; the clean component trains with its
/// given labels at full weight, while the noisy remainder trains on the
/// model's own predictions with a weight ramped linearly from 0 to 1.
/// Deterministic for a fixed `config.seed`.
pub fn train(features: &[&[f64]], labels: &[ClassIndex], classes: usize, config: &TrainingConfig) -> Result<TrainOutcome> {
    if features.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if features.len() != labels.len() {
        return Err(Error::Internal("features and labels differ in length".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::ClassOutOfRange { index: bad, classes });
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::InvalidTask("feature vectors differ in length".into()));
    }
    let n = features.len();
    let epochs = config.epochs.clamp(1, 50);
    let batch = config.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = SlmModel::zeros(classes, dim);
    let mut opt = AdamW::new(classes, dim);
    let mut order: Vec<usize> = (0..n).collect();

    let mut best_loss = f64::INFINITY;
    let mut stale = 0;
    let mut epochs_run = 0;
    for epoch in 0..epochs {
        epochs_run = epoch + 1;
        let filtering = config.filter && epoch >= config.warm_up_epochs;
        let (targets, weights): (Vec<ClassIndex>, Vec<f64>) = if filtering {
            let losses: Vec<f64> = (0..n).map(|i| model.sample_loss(features[i], labels[i])).collect();
            let clean = clean_mask(&fit_gmm_1d(&losses, config.gmm_max_iters), &losses, classes);
            let ramp = if config.ramp_epochs == 0 {
                1.0
            } else {
                ((epoch - config.warm_up_epochs) as f64 / config.ramp_epochs as f64).min(1.0)
            };
            (0..n)
                .map(|i| if clean[i] { (labels[i], 1.0) } else { (model.predict(features[i]), ramp) })
                .unzip()
        } else {
            (labels.to_vec(), vec![1.0; n])
        };

        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_weight = 0.0;
        for chunk in order.chunks(batch) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| features[i]).collect();
            let ys: Vec<ClassIndex> = chunk.iter().map(|&i| targets[i]).collect();
            let ws: Vec<f64> = chunk.iter().map(|&i| weights[i]).collect();
            let (loss, gw, gb) = model.loss_and_grad(&xs, &ys, &ws);
            let w: f64 = ws.iter().sum();
            if w <= 0.0 {
                continue;
            }
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            epoch_loss += loss * w;
            epoch_weight += w;
            opt.step(&mut model, &gw, &gb, config.learning_rate, config.weight_decay);
        }
        if !model.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let mean = epoch_loss / epoch_weight.max(f64::MIN_POSITIVE);
        if epoch >= config.warm_up_epochs {
            if mean < best_loss - 1e-6 {
                best_loss = mean;
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience.max(1) {
                    break;
                }
            }
        }
    }

    let losses: Vec<f64> = (0..n).map(|i| model.sample_loss(features[i], labels[i])).collect();
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Diverged { epoch: epochs_run });
    }
    let partition = config.filter.then(|| fit_gmm_1d(&losses, config.gmm_max_iters));
    let clean = match &partition {
        Some(p) => clean_mask(p, &losses, classes),
        None => vec![true; n],
    };
    Ok(TrainOutcome { model, losses, partition, clean, epochs_run })
}

/// Demonstration candidates from a trained model: lowest-loss fraction per
/// predicted class, then k-medoids over their embeddings.
pub fn curate_demonstrations(
    ids: &[SampleId],
    features: &[&[f64]],
    outcome: &TrainOutcome,
    config: &TrainingConfig,
) -> Result<Vec<SampleId>> {
    let predicted: Vec<ClassIndex> = features.iter().map(|x| outcome.model.predict(x)).collect();
    let selected = select_class_top_k(&outcome.losses, &predicted, config.demo_fraction)?;
    let points: Vec<(SampleId, ClassIndex, Vec<f64>)> = selected
        .iter()
        .flat_map(|(&class, idx)| idx.iter().map(move |&i| (ids[i].clone(), class, embed(features[i]))))
        .collect();
    Ok(kmedoids_demos(&points, config.demo_medoids))
}
