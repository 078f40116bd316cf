//! Two-component 1-D Gaussian mixture over per-sample losses.

use serde::{Deserialize, Serialize};

const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPartition {
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub weights: [f64; 2],
    /// Index of the component with the smaller mean.
    pub clean_component: usize,
    /// Posterior probability of the clean component, in input order.
    pub clean_prob: Vec<f64>,
    pub clean: Vec<bool>,
    /// Log-likelihood of the initial parameters and after every EM step.
    pub log_likelihood: Vec<f64>,
    /// True when the fallback (everything clean) was taken.
    pub degenerate: bool,
}

impl GmmPartition {
    pub fn clean_indices(&self) -> Vec<usize> {
        self.clean.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i).collect()
    }

    fn all_clean(n: usize) -> Self {
        GmmPartition {
            means: [0.0; 2],
            variances: [1.0; 2],
            weights: [1.0, 0.0],
            clean_component: 0,
            clean_prob: vec![1.0; n],
            clean: vec![true; n],
            log_likelihood: Vec::new(),
            degenerate: true,
        }
    }
}

/// Linear-interpolated percentile of an ascending slice, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

struct Params {
    means: [f64; 2],
    vars: [f64; 2],
    weights: [f64; 2],
}

fn log_likelihood(xs: &[f64], p: &Params) -> f64 {
    xs.iter()
        .map(|&x| (p.weights[0] * normal_pdf(x, p.means[0], p.vars[0]) + p.weights[1] * normal_pdf(x, p.means[1], p.vars[1])).ln())
        .sum()
}

fn responsibilities(x: f64, p: &Params) -> [f64; 2] {
    let a = p.weights[0] * normal_pdf(x, p.means[0], p.vars[0]);
    let b = p.weights[1] * normal_pdf(x, p.means[1], p.vars[1]);
    let z = a + b;
    if z > 0.0 && z.is_finite() {
        [a / z, b / z]
    } else {
        // both densities underflow: assign to the nearer mean
        if (x - p.means[0]).abs() <= (x - p.means[1]).abs() {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        }
    }
}

/// Fits a two-component GMM by EM and marks samples whose clean-component
/// posterior exceeds 0.5.
///
/// Means start at the 10th and 90th loss percentiles (min and max if those
/// coincide) with equal weights and the pooled variance. Identical losses
/// take the all-clean fallback. Sums run over the sorted losses so the
/// partition is independent of input order.
pub fn fit_gmm_1d(losses: &[f64], max_iters: usize) -> GmmPartition {
    let n = losses.len();
    if n < 2 || losses.iter().any(|x| !x.is_finite()) {
        return GmmPartition::all_clean(n);
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let (min, max) = (sorted[0], sorted[n - 1]);
    if max - min <= 0.0 {
        return GmmPartition::all_clean(n);
    }
    let (mut lo, mut hi) = (percentile(&sorted, 0.1), percentile(&sorted, 0.9));
    if hi - lo <= 0.0 {
        lo = min;
        hi = max;
    }
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let var = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).max(VARIANCE_FLOOR);
    let mut p = Params { means: [lo, hi], vars: [var, var], weights: [0.5, 0.5] };

    let mut trace = vec![log_likelihood(&sorted, &p)];
    for _ in 0..max_iters {
        let mut mass = [0.0; 2];
        let mut sum = [0.0; 2];
        let resp: Vec<[f64; 2]> = sorted.iter().map(|&x| responsibilities(x, &p)).collect();
        for (x, r) in sorted.iter().zip(&resp) {
            for c in 0..2 {
                mass[c] += r[c];
                sum[c] += r[c] * x;
            }
        }
        if mass[0] <= 0.0 || mass[1] <= 0.0 {
            break;
        }
        let means = [sum[0] / mass[0], sum[1] / mass[1]];
        let mut sq = [0.0; 2];
        for (x, r) in sorted.iter().zip(&resp) {
            for c in 0..2 {
                sq[c] += r[c] * (x - means[c]).powi(2);
            }
        }
        p = Params {
            means,
            vars: [(sq[0] / mass[0]).max(VARIANCE_FLOOR), (sq[1] / mass[1]).max(VARIANCE_FLOOR)],
            weights: [mass[0] / n as f64, mass[1] / n as f64],
        };
        trace.push(log_likelihood(&sorted, &p));
    }

    let clean_component = if p.means[1] < p.means[0] { 1 } else { 0 };
    let clean_prob: Vec<f64> = losses.iter().map(|&x| responsibilities(x, &p)[clean_component]).collect();
    let clean = clean_prob.iter().map(|&q| q > 0.5).collect();
    GmmPartition {
        means: p.means,
        variances: p.vars,
        weights: p.weights,
        clean_component,
        clean_prob,
        clean,
        log_likelihood: trace,
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn separated_clusters() {
        let part = fit_gmm_1d(&[0.1, 0.12, 0.09, 1.9, 2.1, 2.0], 10);
        assert_eq!(part.clean, vec![true, true, true, false, false, false]);
        assert!((part.weights[0] + part.weights[1] - 1.0).abs() < 1e-12);
        assert!(part.variances.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn identical_losses_are_all_clean() {
        let part = fit_gmm_1d(&[0.5; 7], 10);
        assert!(part.degenerate);
        assert!(part.clean.iter().all(|&c| c));
    }

    #[test]
    fn mostly_identical_losses_still_split() {
        let mut losses = vec![0.1; 19];
        losses.push(3.0);
        let part = fit_gmm_1d(&losses, 10);
        assert!(!part.clean[19]);
        assert_eq!(part.clean.iter().filter(|&&c| c).count(), 19);
    }

    #[test]
    fn percentile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&s, 0.1), 0.4);
        assert_eq!(percentile(&s, 0.9), 3.6);
    }

    proptest! {
        #[test]
        fn likelihood_is_monotone(xs in prop::collection::vec(0.0f64..5.0, 4..60)) {
            let part = fit_gmm_1d(&xs, 10);
            for w in part.log_likelihood.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{:?}", part.log_likelihood);
            }
        }

        #[test]
        fn partition_ignores_order(xs in prop::collection::vec(0.0f64..5.0, 4..40), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
            let a = fit_gmm_1d(&xs, 10);
            let b = fit_gmm_1d(&shuffled, 10);
            for (pos, &i) in idx.iter().enumerate() {
                prop_assert_eq!(a.clean[i], b.clean[pos]);
            }
        }
    }
}
