//! Truth inference over conflicting labels: majority voting, sequential
//! Bayesian updating with per-annotator confusion matrices, and
//! Dawid–Skene EM.

mod dawid_skene;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use dawid_skene::{dawid_skene, DsInit, DsOutcome};

use crate::error::{Error, Result};
use crate::model::{
    floor_normalize, AnnotatorId, ClassIndex, ConfusionMatrix, LabelRecord, PosteriorBelief, SampleId,
    DEFAULT_DIAGONAL, PROB_FLOOR,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    Majority,
    DawidSkene,
    #[default]
    Bayesian,
}

fn default_ds_iters() -> usize {
    100
}
fn default_ds_tol() -> f64 {
    1e-6
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationMethod {
    #[serde(default)]
    pub kind: AggregationKind,
    #[serde(default = "default_ds_iters")]
    pub ds_max_iters: usize,
    #[serde(default = "default_ds_tol")]
    pub ds_tolerance: f64,
    /// Add-one smoothing of confusion-matrix rows.
    #[serde(default = "default_true")]
    pub smoothing: bool,
}

impl Default for AggregationMethod {
    fn default() -> Self {
        AggregationMethod {
            kind: AggregationKind::Bayesian,
            ds_max_iters: default_ds_iters(),
            ds_tolerance: default_ds_tol(),
            smoothing: true,
        }
    }
}

impl AggregationMethod {
    pub fn validate(&self) -> Result<()> {
        if self.ds_max_iters == 0 {
            return Err(Error::InvalidTask("ds_max_iters must be >= 1".into()));
        }
        if !(self.ds_tolerance > 0.0) {
            return Err(Error::InvalidTask("ds_tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// Plurality label; ties go to the lowest class index.
pub fn majority_vote(labels: &[ClassIndex]) -> Result<ClassIndex> {
    if labels.is_empty() {
        return Err(Error::Empty("label list"));
    }
    let classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for c in 1..classes {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    Ok(best)
}

/// Vote-share belief used by the majority aggregation method.
pub fn majority_belief(
    sample_id: SampleId,
    labels: &[ClassIndex],
    classes: usize,
    prior: &[f64],
    threshold: f64,
) -> Result<PosteriorBelief> {
    if labels.is_empty() {
        return Ok(PosteriorBelief::from_probs(sample_id, prior.to_vec(), threshold));
    }
    let mut probs = vec![0.0; classes];
    for &l in labels {
        if l >= classes {
            return Err(Error::ClassOutOfRange { index: l, classes });
        }
        probs[l] += 1.0;
    }
    floor_normalize(&mut probs, PROB_FLOOR)?;
    let winner = majority_vote(labels)?;
    let mut belief = PosteriorBelief::from_probs(sample_id, probs, threshold);
    // keep the documented tie rule even when floats tie exactly
    belief.aggregated_label = winner;
    belief.confidence = belief.probs[winner];
    belief.converged = belief.confidence >= threshold;
    Ok(belief)
}

/// Estimates a confusion matrix from `(true class, reported class)` pairs.
///
/// With smoothing on, row `c` is `(count(c→j) + 1) / (Σ_j count(c→j) + C)`.
/// Rows without any golden support fall back to the default prior row.
pub fn estimate_confusion(
    annotator_id: AnnotatorId,
    classes: usize,
    golden_records: &[(ClassIndex, ClassIndex)],
    smoothing: bool,
) -> Result<ConfusionMatrix> {
    let mut counts = vec![vec![0u64; classes]; classes];
    for &(truth, reported) in golden_records {
        for idx in [truth, reported] {
            if idx >= classes {
                return Err(Error::ClassOutOfRange { index: idx, classes });
            }
        }
        counts[truth][reported] += 1;
    }
    let default = ConfusionMatrix::default_for(annotator_id.clone(), classes);
    let mut rows = Vec::with_capacity(classes);
    let mut support = Vec::with_capacity(classes);
    for (c, row) in counts.iter().enumerate() {
        let n: u64 = row.iter().sum();
        support.push(n);
        if n == 0 {
            rows.push(default.rows[c].clone());
            continue;
        }
        let mut r: Vec<f64> = if smoothing {
            row.iter().map(|&k| (k as f64 + 1.0) / (n as f64 + classes as f64)).collect()
        } else {
            row.iter().map(|&k| k as f64 / n as f64).collect()
        };
        if !smoothing {
            floor_normalize(&mut r, PROB_FLOOR)?;
        }
        rows.push(r);
    }
    Ok(ConfusionMatrix { annotator_id, rows, support })
}

/// One Bayes step: `post(c) ∝ π(observed | c) · prior(c)`, renormalized,
/// floored at [`PROB_FLOOR`] and renormalized again.
pub fn bayesian_update(prior: &[f64], matrix: &ConfusionMatrix, observed: ClassIndex) -> Result<Vec<f64>> {
    let classes = prior.len();
    if matrix.classes() != classes {
        return Err(Error::Internal(format!(
            "matrix for {} has {} classes, prior has {classes}",
            matrix.annotator_id,
            matrix.classes()
        )));
    }
    if observed >= classes {
        return Err(Error::ClassOutOfRange { index: observed, classes });
    }
    let mut post: Vec<f64> = (0..classes).map(|c| matrix.likelihood(c, observed) * prior[c]).collect();
    if post.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Internal(format!(
            "all-zero likelihood for label {observed} from {}",
            matrix.annotator_id
        )));
    }
    floor_normalize(&mut post, PROB_FLOOR)?;
    Ok(post)
}

/// Folds [`bayesian_update`] over one sample's records, starting from `prior`.
///
/// Records are applied in canonical order (round, annotator, timestamp,
/// label), so the result does not depend on the order they are passed in.
pub fn aggregate_bayesian<'a>(
    sample_id: &SampleId,
    records: impl IntoIterator<Item = &'a LabelRecord>,
    matrices: &BTreeMap<AnnotatorId, ConfusionMatrix>,
    prior: &[f64],
    threshold: f64,
) -> Result<PosteriorBelief> {
    let mut ordered: Vec<&LabelRecord> = records.into_iter().collect();
    ordered.sort_by(|a, b| {
        (a.round, &a.annotator_id, a.timestamp, a.label).cmp(&(b.round, &b.annotator_id, b.timestamp, b.label))
    });
    let mut belief = prior.to_vec();
    floor_normalize(&mut belief, PROB_FLOOR)?;
    for r in ordered {
        let matrix = matrices.get(&r.annotator_id).ok_or_else(|| Error::UnknownAnnotator(r.annotator_id.clone()))?;
        belief = bayesian_update(&belief, matrix, r.label)?;
    }
    Ok(PosteriorBelief::from_probs(sample_id.clone(), belief, threshold))
}

/// Identity-like matrix with diagonal `1 - floor`, used in tests and for
/// trusted sources.
pub fn near_identity(annotator_id: AnnotatorId, classes: usize) -> ConfusionMatrix {
    ConfusionMatrix {
        annotator_id,
        rows: crate::model::diagonal_matrix(classes, 1.0 - PROB_FLOOR),
        support: vec![0; classes],
    }
}

/// Off-diagonal entry of the default matrix for `classes` classes.
pub fn default_off_diagonal(classes: usize) -> f64 {
    (1.0 - DEFAULT_DIAGONAL) / (classes - 1) as f64
}
