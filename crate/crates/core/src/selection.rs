//! Picking which unconverged samples go to human annotators: a
//! low-confidence candidate pool narrowed by greedy k-center (Core-Set).

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{PosteriorBelief, SampleId};
use crate::slm::kmedoids::euclidean;
use crate::slm::select::ceil_fraction;

/// The `⌈fraction · N⌉` unconverged samples with the lowest confidence,
/// where N counts every belief passed in. Ties break by sample id.
pub fn uncertainty_pool<'a>(
    beliefs: impl IntoIterator<Item = &'a PosteriorBelief>,
    fraction: f64,
) -> Result<Vec<SampleId>> {
    uncertainty_pool_excluding(beliefs, fraction, &BTreeSet::new())
}

/// [`uncertainty_pool`] that also skips the samples in `exclude`, while
/// still sizing the pool from the full belief count.
pub fn uncertainty_pool_excluding<'a>(
    beliefs: impl IntoIterator<Item = &'a PosteriorBelief>,
    fraction: f64,
    exclude: &BTreeSet<SampleId>,
) -> Result<Vec<SampleId>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidTask(format!("pool fraction {fraction} outside (0, 1]")));
    }
    let all: Vec<&PosteriorBelief> = beliefs.into_iter().collect();
    let size = ceil_fraction(fraction, all.len());
    let mut open: Vec<&PosteriorBelief> =
        all.into_iter().filter(|b| !b.converged && !exclude.contains(&b.sample_id)).collect();
    open.sort_by(|a, b| a.confidence.total_cmp(&b.confidence).then_with(|| a.sample_id.cmp(&b.sample_id)));
    Ok(open.into_iter().take(size).map(|b| b.sample_id.clone()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub sample_id: SampleId,
    pub embedding: Vec<f64>,
    pub confidence: f64,
}

/// Greedy k-center over `candidates`.
///
/// Each step picks the candidate whose distance to the nearest point of
/// `labeled ∪ picked` is largest (ties to the earliest candidate). With no
/// labeled points the lowest-confidence candidate seeds the set.
pub fn coreset_select(candidates: &[Candidate], labeled: &[Vec<f64>], budget: usize) -> Result<Vec<SampleId>> {
    if budget == 0 {
        return Ok(Vec::new());
    }
    if candidates.is_empty() {
        return Err(Error::Empty("coreset candidates"));
    }
    let budget = budget.min(candidates.len());
    let mut nearest: Vec<f64> = candidates
        .iter()
        .map(|c| labeled.iter().map(|l| euclidean(&c.embedding, l)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut taken = vec![false; candidates.len()];
    let mut picks = Vec::with_capacity(budget);

    let take = |idx: usize, taken: &mut Vec<bool>, nearest: &mut Vec<f64>, picks: &mut Vec<SampleId>| {
        taken[idx] = true;
        picks.push(candidates[idx].sample_id.clone());
        for (j, c) in candidates.iter().enumerate() {
            nearest[j] = nearest[j].min(euclidean(&c.embedding, &candidates[idx].embedding));
        }
    };

    if labeled.is_empty() {
        let seed = (0..candidates.len())
            .min_by(|&a, &b| {
                candidates[a]
                    .confidence
                    .total_cmp(&candidates[b].confidence)
                    .then_with(|| candidates[a].sample_id.cmp(&candidates[b].sample_id))
            })
            .expect("non-empty");
        take(seed, &mut taken, &mut nearest, &mut picks);
    }
    while picks.len() < budget {
        let mut best: Option<usize> = None;
        for j in (0..candidates.len()).filter(|&j| !taken[j]) {
            if best.is_none_or(|b| nearest[j] > nearest[b]) {
                best = Some(j);
            }
        }
        take(best.expect("budget <= candidates"), &mut taken, &mut nearest, &mut picks);
    }
    Ok(picks)
}

/// Largest distance from any candidate to its nearest center in
/// `labeled ∪ centers`.
pub fn covering_radius(candidates: &[Vec<f64>], labeled: &[Vec<f64>], centers: &[Vec<f64>]) -> f64 {
    candidates
        .iter()
        .map(|c| {
            labeled
                .iter()
                .chain(centers)
                .map(|p| euclidean(c, p))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}
