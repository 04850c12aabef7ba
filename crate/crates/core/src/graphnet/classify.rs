//! The three case-level decision rules: pixel voting, vertex voting and
//! global classification. Every tie goes to the lower class id.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::volume::LabelVolume;

/// Which segmentation label (and vertex class channel) stands for which
/// case class, plus the class returned when no mass is found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MassClassMap {
    /// `(label, class id)` pairs.
    pub entries: Vec<(u8, usize)>,
    pub default_class: usize,
}

impl MassClassMap {
    fn class_of(&self, label: usize) -> Option<usize> {
        self.entries.iter().find(|(l, _)| *l as usize == label).map(|&(_, c)| c)
    }

    /// Class with the largest vote, lower id on ties; `None` when every
    /// vote is zero.
    fn winner(&self, votes: impl IntoIterator<Item = (usize, usize)>) -> Option<(usize, usize)> {
        let mut per_class: Vec<(usize, usize)> = Vec::new();
        for (class, v) in votes {
            match per_class.iter_mut().find(|(c, _)| *c == class) {
                Some(slot) => slot.1 += v,
                None => per_class.push((class, v)),
            }
        }
        per_class
            .into_iter()
            .filter(|&(_, v)| v > 0)
            .min_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)))
    }
}

/// Voxel count of every mass label, in `map.entries` order.
pub fn mass_counts(labels: &LabelVolume, map: &MassClassMap) -> Vec<usize> {
    let mut hist = [0usize; 256];
    for &l in &labels.data {
        hist[l as usize] += 1;
    }
    map.entries.iter().map(|&(l, _)| hist[l as usize]).collect()
}

pub fn classify_pv_counts(counts: &[usize], map: &MassClassMap, threshold: usize) -> usize {
    match map.winner(map.entries.iter().zip(counts).map(|(&(_, c), &n)| (c, n))) {
        Some((class, n)) if n >= threshold => class,
        _ => map.default_class,
    }
}

/// Largest mass class by voxel count if it reaches `threshold`, else the
/// default class.
pub fn classify_pv(labels: &LabelVolume, map: &MassClassMap, threshold: usize) -> usize {
    classify_pv_counts(&mass_counts(labels, map), map, threshold)
}

/// Threshold maximising pixel-voting accuracy on `(counts, true class)`
/// pairs. Candidates are zero and every observed winning count; the
/// smallest best threshold wins.
pub fn select_pv_threshold(validation: &[(Vec<usize>, usize)], map: &MassClassMap) -> usize {
    let mut candidates: Vec<usize> = vec![0];
    for (counts, _) in validation {
        candidates.extend(counts.iter().copied());
        candidates.extend(counts.iter().map(|c| c + 1));
    }
    candidates.sort_unstable();
    candidates.dedup();
    let mut best = (0usize, 0usize);
    for &t in &candidates {
        let correct = validation
            .iter()
            .filter(|(counts, truth)| classify_pv_counts(counts, map, t) == *truth)
            .count();
        if correct > best.1 {
            best = (t, correct);
        }
    }
    best.0
}

/// Majority class among vertices whose argmax is a mass channel.
pub fn classify_vv(vertex_probs: &Array2<f64>, map: &MassClassMap) -> usize {
    let votes = vertex_probs.rows().into_iter().filter_map(|row| {
        let k = argmax(row.iter().copied());
        map.class_of(k).map(|c| (c, 1))
    });
    map.winner(votes).map_or(map.default_class, |(c, _)| c)
}

/// 1-based index of the largest global probability.
pub fn classify_gc(global_probs: &Array1<f64>) -> usize {
    argmax(global_probs.iter().copied()) + 1
}

/// First index of the maximum.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
