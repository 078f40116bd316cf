use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{floor_normalize, AnnotatorId, ClassIndex, ConfusionMatrix, LabelRecord, SampleId, PROB_FLOOR};

use super::{majority_vote, AggregationMethod};

/// Optional starting point, usually matrices estimated on the golden set.
#[derive(Debug, Clone, Default)]
pub struct DsInit {
    pub matrices: BTreeMap<AnnotatorId, ConfusionMatrix>,
    pub prior: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct DsOutcome {
    /// Floored class posteriors per sample.
    pub beliefs: BTreeMap<SampleId, Vec<f64>>,
    pub matrices: BTreeMap<AnnotatorId, ConfusionMatrix>,
    pub prior: Vec<f64>,
    pub iterations: usize,
    /// False when `ds_max_iters` was reached before the tolerance.
    pub converged: bool,
    /// Objective after every M-step. With smoothing this is the log
    /// posterior (log-likelihood plus the Dirichlet smoothing terms), which EM
    /// never decreases.
    pub objective: Vec<f64>,
}

struct Params {
    prior: Vec<f64>,
    // [annotator][true][reported]
    pi: Vec<Vec<Vec<f64>>>,
}

/// Dawid–Skene EM over every sample that appears in `records`.
///
/// Initialization uses `init` matrices when given (missing annotators get
/// the default matrix), otherwise hard majority-vote labels. Iterates until
/// the largest change of any posterior entry is below `ds_tolerance` or
/// `ds_max_iters` M-steps have run.
///
/// Smoothing adds C pseudo-counts to every matrix row. Without an init
/// matrix they are spread uniformly (add-one); with one they follow its row,
/// so a golden-set estimate keeps anchoring the re-estimated matrices.
pub fn dawid_skene(
    records: &[LabelRecord],
    classes: usize,
    init: Option<&DsInit>,
    method: &AggregationMethod,
) -> Result<DsOutcome> {
    method.validate()?;
    if classes < 2 {
        return Err(Error::InvalidTask("dawid_skene needs at least 2 classes".into()));
    }
    let mut sample_ids: Vec<SampleId> = records.iter().map(|r| r.sample_id.clone()).collect();
    sample_ids.sort();
    sample_ids.dedup();
    let mut annotator_ids: Vec<AnnotatorId> = records.iter().map(|r| r.annotator_id.clone()).collect();
    annotator_ids.sort();
    annotator_ids.dedup();
    if sample_ids.is_empty() {
        return Err(Error::Empty("records"));
    }

    // per sample: (annotator index, label)
    let mut observations: Vec<Vec<(usize, ClassIndex)>> = vec![Vec::new(); sample_ids.len()];
    for r in records {
        if r.label >= classes {
            return Err(Error::ClassOutOfRange { index: r.label, classes });
        }
        let i = sample_ids.binary_search(&r.sample_id).expect("indexed");
        let k = annotator_ids.binary_search(&r.annotator_id).expect("indexed");
        observations[i].push((k, r.label));
    }

    let mut posteriors: Vec<Vec<f64>> = match init {
        Some(init) => {
            let pi = annotator_ids
                .iter()
                .map(|id| {
                    init.matrices
                        .get(id)
                        .map(|m| m.rows.clone())
                        .unwrap_or_else(|| ConfusionMatrix::default_for(id.clone(), classes).rows)
                })
                .collect();
            let prior = init.prior.clone().unwrap_or_else(|| vec![1.0 / classes as f64; classes]);
            e_step(&observations, &Params { prior, pi }, classes)
        }
        None => observations
            .iter()
            .map(|obs| {
                let labels: Vec<_> = obs.iter().map(|&(_, l)| l).collect();
                let winner = majority_vote(&labels).expect("every sample has a record");
                let mut t = vec![0.0; classes];
                t[winner] = 1.0;
                t
            })
            .collect(),
    };

    // Smoothing pseudo-counts: C per row, spread uniformly (add-one) or in
    // proportion to the supplied matrix.
    let pseudo: Vec<Vec<Vec<f64>>> = annotator_ids
        .iter()
        .map(|id| {
            if !method.smoothing {
                return vec![vec![0.0; classes]; classes];
            }
            match init.and_then(|i| i.matrices.get(id)) {
                Some(m) => m
                    .rows
                    .iter()
                    .map(|row| {
                        let total: f64 = row.iter().map(|x| x.max(PROB_FLOOR)).sum();
                        row.iter().map(|x| classes as f64 * x.max(PROB_FLOOR) / total).collect()
                    })
                    .collect(),
                None => vec![vec![1.0; classes]; classes],
            }
        })
        .collect();

    let mut objective: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut params = None;
    for _ in 0..method.ds_max_iters {
        iterations += 1;
        let current = m_step(&observations, &posteriors, &pseudo, classes, method.smoothing);
        let obj = log_objective(&observations, &current, &pseudo, method.smoothing);
        if let Some(&prev) = objective.last() {
            if obj < prev - 1e-9 * prev.abs().max(1.0) {
                log::warn!("dawid_skene objective decreased: {prev} -> {obj}");
            }
        }
        objective.push(obj);
        let next = e_step(&observations, &current, classes);
        params = Some(current);
        let delta = next
            .iter()
            .zip(&posteriors)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        posteriors = next;
        if delta < method.ds_tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("dawid_skene stopped after {iterations} iterations without reaching tolerance");
    }

    let params = params.expect("at least one iteration");
    let mut beliefs = BTreeMap::new();
    for (id, mut t) in sample_ids.into_iter().zip(posteriors) {
        floor_normalize(&mut t, PROB_FLOOR)?;
        beliefs.insert(id, t);
    }
    let matrices = annotator_ids
        .into_iter()
        .zip(params.pi)
        .map(|(id, rows)| {
            let support = vec![0; classes];
            (id.clone(), ConfusionMatrix { annotator_id: id, rows, support })
        })
        .collect();
    Ok(DsOutcome { beliefs, matrices, prior: params.prior, iterations, converged, objective })
}

fn m_step(
    observations: &[Vec<(usize, ClassIndex)>],
    posteriors: &[Vec<f64>],
    pseudo: &[Vec<Vec<f64>>],
    classes: usize,
    smoothing: bool,
) -> Params {
    let add = if smoothing { 1.0 } else { 0.0 };
    let mut class_mass = vec![add; classes];
    let mut counts = pseudo.to_vec();
    for (obs, t) in observations.iter().zip(posteriors) {
        for c in 0..classes {
            class_mass[c] += t[c];
            for &(k, l) in obs {
                counts[k][c][l] += t[c];
            }
        }
    }
    let total: f64 = class_mass.iter().sum();
    let mut prior: Vec<f64> = class_mass.iter().map(|m| m / total).collect();
    if !smoothing {
        floor_normalize(&mut prior, PROB_FLOOR).expect("positive mass");
    }
    let pi = counts
        .into_iter()
        .map(|rows| {
            rows.into_iter()
                .map(|mut row| {
                    let n: f64 = row.iter().sum();
                    if n <= 0.0 {
                        return vec![1.0 / classes as f64; classes];
                    }
                    row.iter_mut().for_each(|x| *x /= n);
                    if !smoothing {
                        floor_normalize(&mut row, PROB_FLOOR).expect("positive row");
                    }
                    row
                })
                .collect()
        })
        .collect();
    Params { prior, pi }
}

fn e_step(observations: &[Vec<(usize, ClassIndex)>], params: &Params, classes: usize) -> Vec<Vec<f64>> {
    observations
        .iter()
        .map(|obs| {
            let logs: Vec<f64> = (0..classes)
                .map(|c| params.prior[c].ln() + obs.iter().map(|&(k, l)| params.pi[k][c][l].ln()).sum::<f64>())
                .collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut t: Vec<f64> = logs.iter().map(|x| (x - max).exp()).collect();
            let z: f64 = t.iter().sum();
            t.iter_mut().for_each(|x| *x /= z);
            t
        })
        .collect()
}

fn log_objective(observations: &[Vec<(usize, ClassIndex)>], params: &Params, pseudo: &[Vec<Vec<f64>>], smoothing: bool) -> f64 {
    let classes = params.prior.len();
    let mut ll = 0.0;
    for obs in observations {
        let logs: Vec<f64> = (0..classes)
            .map(|c| params.prior[c].ln() + obs.iter().map(|&(k, l)| params.pi[k][c][l].ln()).sum::<f64>())
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        ll += max + logs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    }
    if smoothing {
        ll += params.prior.iter().map(|p| p.ln()).sum::<f64>();
        ll += params
            .pi
            .iter()
            .flatten()
            .flatten()
            .zip(pseudo.iter().flatten().flatten())
            .map(|(p, a)| a * p.ln())
            .sum::<f64>();
    }
    ll
}
