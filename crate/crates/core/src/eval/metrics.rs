use std::cmp::Ordering;

use crate::error::{Error, Result};

/// `(label, score)` pairs; labels in `{0, 1}`, scores finite.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    pairs: Vec<(u8, f64)>,
}

impl ScoredSet {
    pub fn new(pairs: Vec<(u8, f64)>) -> Result<Self> {
        if let Some((l, s)) = pairs.iter().find(|(l, s)| *l > 1 || !s.is_finite()) {
            return Err(Error::Metric(format!("invalid scored pair (label {l}, score {s})")));
        }
        Ok(ScoredSet { pairs })
    }

    pub fn pairs(&self) -> &[(u8, f64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|(l, _)| *l == 1).count()
    }
}

/// Rank-based (Mann-Whitney) ROC AUC; tied scores share their mean rank,
/// so each tied positive/negative pair contributes one half.
pub fn auc(scored: &ScoredSet) -> Result<f64> {
    let n_pos = scored.positives();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(format!(
            "AUC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut sorted: Vec<(f64, u8)> = scored.pairs.iter().map(|&(l, s)| (s, l)).collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

    // Twice the positive rank sum keeps tied mean ranks integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j have mean (i + 1 + j) / 2.
        let twice_mean = (i + 1 + j) as u64;
        let pos_in_group = sorted[i..j].iter().filter(|(_, l)| *l == 1).count() as u64;
        twice_rank_sum += twice_mean * pos_in_group;
        i = j;
    }
    let (p, q) = (n_pos as u64, n_neg as u64);
    // 2U = 2R - p(p+1)
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * q) as f64)
}

/// Fraction of scores at or above `threshold`.
pub fn detection_rate(scores: &[f64], threshold: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Metric("detection rate of an empty set".into()));
    }
    let hits = scores.iter().filter(|&&s| s >= threshold).count();
    Ok(hits as f64 / scores.len() as f64)
}
