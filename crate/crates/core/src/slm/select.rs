use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ClassIndex;

/// `⌈fraction · n⌉`, tolerant of representation error in `fraction · n`.
pub fn ceil_fraction(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let rounded = raw.round();
    let k = if (raw - rounded).abs() < 1e-9 { rounded } else { raw.ceil() };
    (k as usize).min(n)
}

/// Per class, the `⌈fraction · n_c⌉` indices with the lowest loss (ties by
/// index). Returns the selected indices grouped by class.
pub fn select_class_top_k(
    losses: &[f64],
    labels: &[ClassIndex],
    fraction: f64,
) -> Result<BTreeMap<ClassIndex, Vec<usize>>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidTask(format!("selection fraction {fraction} outside (0, 1]")));
    }
    if losses.len() != labels.len() {
        return Err(Error::Internal("losses and labels differ in length".into()));
    }
    let mut by_class: BTreeMap<ClassIndex, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    for members in by_class.values_mut() {
        members.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
        let keep = ceil_fraction(fraction, members.len());
        members.truncate(keep);
    }
    Ok(by_class)
}
