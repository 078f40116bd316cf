//! k-medoids (PAM) for picking representative demonstrations.

use std::collections::BTreeMap;

use crate::model::{ClassIndex, SampleId};

/// Subset counts up to this size are searched exhaustively instead of PAM.
pub const EXACT_SEARCH_LIMIT: u64 = 5_000;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn distance_matrix(points: &[&[f64]]) -> Vec<Vec<f64>> {
    points.iter().map(|a| points.iter().map(|b| euclidean(a, b)).collect()).collect()
}

/// Sum over points of the distance to the nearest medoid.
pub fn total_cost(dist: &[Vec<f64>], medoids: &[usize]) -> f64 {
    (0..dist.len())
        .map(|i| medoids.iter().map(|&m| dist[i][m]).fold(f64::INFINITY, f64::min))
        .sum()
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u64::MAX,
        };
    }
    acc
}

/// PAM: greedy BUILD followed by best-improvement SWAP until no swap lowers
/// the cost. Ties resolve to the lowest index.
pub fn pam(dist: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = dist.len();
    if k >= n {
        return (0..n).collect();
    }
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; n];
    while medoids.len() < k {
        let mut best = (f64::INFINITY, usize::MAX);
        for cand in (0..n).filter(|c| !medoids.contains(c)) {
            let cost: f64 = (0..n).map(|i| nearest[i].min(dist[i][cand])).sum();
            if cost < best.0 {
                best = (cost, cand);
            }
        }
        medoids.push(best.1);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist[i][best.1]);
        }
    }

    let mut cost = total_cost(dist, &medoids);
    loop {
        let mut best = (cost, usize::MAX, usize::MAX);
        for slot in 0..k {
            for cand in (0..n).filter(|c| !medoids.contains(c)) {
                let mut trial = medoids.clone();
                trial[slot] = cand;
                let c = total_cost(dist, &trial);
                if c < best.0 - 1e-12 {
                    best = (c, slot, cand);
                }
            }
        }
        if best.1 == usize::MAX {
            break;
        }
        medoids[best.1] = best.2;
        cost = best.0;
    }
    medoids.sort_unstable();
    medoids
}

fn exhaustive(dist: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = dist.len();
    let mut combo: Vec<usize> = (0..k).collect();
    let mut best = (total_cost(dist, &combo), combo.clone());
    loop {
        // advance to the next combination in lexicographic order
        let mut i = k;
        while i > 0 && combo[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        combo[i - 1] += 1;
        for j in i..k {
            combo[j] = combo[j - 1] + 1;
        }
        let c = total_cost(dist, &combo);
        if c < best.0 - 1e-12 {
            best = (c, combo.clone());
        }
    }
    best.1
}

/// Medoid indices for `points`: exact for small subset counts, PAM otherwise.
pub fn kmedoids(points: &[&[f64]], k: usize) -> Vec<usize> {
    let n = points.len();
    if k == 0 {
        return Vec::new();
    }
    if k >= n {
        return (0..n).collect();
    }
    let dist = distance_matrix(points);
    if binomial(n as u64, k as u64) <= EXACT_SEARCH_LIMIT {
        exhaustive(&dist, k)
    } else {
        pam(&dist, k)
    }
}

/// Per class, the `k` medoids of the given clean-sample embeddings (all of
/// them when a class has at most `k`). Output is ordered by class, then id.
pub fn kmedoids_demos(points: &[(SampleId, ClassIndex, Vec<f64>)], k: usize) -> Vec<SampleId> {
    let mut by_class: BTreeMap<ClassIndex, Vec<&(SampleId, ClassIndex, Vec<f64>)>> = BTreeMap::new();
    for p in points {
        by_class.entry(p.1).or_default().push(p);
    }
    let mut out = Vec::new();
    for (_, mut members) in by_class {
        members.sort_by(|a, b| a.0.cmp(&b.0));
        let emb: Vec<&[f64]> = members.iter().map(|p| p.2.as_slice()).collect();
        let mut ids: Vec<SampleId> = kmedoids(&emb, k).into_iter().map(|i| members[i].0.clone()).collect();
        ids.sort();
        out.extend(ids);
    }
    out
}
