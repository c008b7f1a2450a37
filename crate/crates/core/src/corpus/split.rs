use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::generate::stream_rng;
use super::LabeledExample;
use crate::error::{Error, Result};

/// The five disjoint subsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subset {
    AttackerTrain,
    AttackerVal,
    VictimTrain,
    VictimVal,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 5] = [
        Subset::AttackerTrain,
        Subset::AttackerVal,
        Subset::VictimTrain,
        Subset::VictimVal,
        Subset::Test,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subset::AttackerTrain => "attacker_train",
            Subset::AttackerVal => "attacker_val",
            Subset::VictimTrain => "victim_train",
            Subset::VictimVal => "victim_val",
            Subset::Test => "test",
        }
    }
}

/// Target proportions of each subset, in [`Subset::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub fractions: [f64; 5],
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            fractions: [0.3, 0.1, 0.3, 0.1, 0.2],
        }
    }
}

/// Example ids per subset (ascending within each subset).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub attacker_train: Vec<usize>,
    pub attacker_val: Vec<usize>,
    pub victim_train: Vec<usize>,
    pub victim_val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn ids(&self, subset: Subset) -> &[usize] {
        match subset {
            Subset::AttackerTrain => &self.attacker_train,
            Subset::AttackerVal => &self.attacker_val,
            Subset::VictimTrain => &self.victim_train,
            Subset::VictimVal => &self.victim_val,
            Subset::Test => &self.test,
        }
    }

    fn ids_mut(&mut self, subset: Subset) -> &mut Vec<usize> {
        match subset {
            Subset::AttackerTrain => &mut self.attacker_train,
            Subset::AttackerVal => &mut self.attacker_val,
            Subset::VictimTrain => &mut self.victim_train,
            Subset::VictimVal => &mut self.victim_val,
            Subset::Test => &mut self.test,
        }
    }

    /// Examples of `subset`, in id order. Fails if an id is missing from `corpus`.
    pub fn select(&self, corpus: &[LabeledExample], subset: Subset) -> Result<Vec<LabeledExample>> {
        let by_id: HashMap<usize, &LabeledExample> = corpus.iter().map(|e| (e.id, e)).collect();
        self.ids(subset)
            .iter()
            .map(|id| {
                by_id.get(id).map(|&e| e.clone()).ok_or_else(|| {
                    Error::Config(format!("split {} references unknown example id {id}", subset.name()))
                })
            })
            .collect()
    }
}

/// Largest-remainder apportionment of `total` by `quotas` (which sum to `total`).
/// Ties go to the lower index.
fn apportion(total: usize, quotas: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

const MIN_PER_CLASS: usize = 5;

/// Stratified partition into the five subsets. Subset sizes are within one
/// example of their targets, and each subset's malware count is within one
/// example of its proportional share.
pub fn split(corpus: &[LabeledExample], spec: &SplitSpec, seed: u64) -> Result<Splits> {
    let n = corpus.len();
    if n < 10 {
        return Err(Error::Config(format!("corpus of {n} examples is too small to split (need at least 10)")));
    }
    let total_frac: f64 = spec.fractions.iter().sum();
    if spec.fractions.iter().any(|&f| f < 0.0) || (total_frac - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions must be non-negative and sum to 1, got {:?}", spec.fractions)));
    }
    let mut malware: Vec<usize> = corpus.iter().filter(|e| e.is_malware()).map(|e| e.id).collect();
    let mut benign: Vec<usize> = corpus.iter().filter(|e| !e.is_malware()).map(|e| e.id).collect();
    if malware.len() < MIN_PER_CLASS || benign.len() < MIN_PER_CLASS {
        return Err(Error::Config(format!(
            "stratified split needs at least {MIN_PER_CLASS} examples per class, got {} malware and {} benign",
            malware.len(),
            benign.len()
        )));
    }

    let sizes = apportion(n, &spec.fractions.map(|f| f * n as f64));
    let mal_share = malware.len() as f64 / n as f64;
    let mal_quotas: Vec<f64> = sizes.iter().map(|&s| s as f64 * mal_share).collect();
    let mal_counts = apportion(malware.len(), &mal_quotas);

    let mut rng = stream_rng(seed, 0x5_9117);
    malware.sort_unstable();
    benign.sort_unstable();
    malware.shuffle(&mut rng);
    benign.shuffle(&mut rng);

    let mut splits = Splits::default();
    let (mut mi, mut bi) = (0, 0);
    for (k, subset) in Subset::ALL.into_iter().enumerate() {
        let m = mal_counts[k];
        let b = sizes[k] - m;
        let ids = splits.ids_mut(subset);
        ids.extend_from_slice(&malware[mi..mi + m]);
        ids.extend_from_slice(&benign[bi..bi + b]);
        ids.sort_unstable();
        mi += m;
        bi += b;
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec};

    fn sizes(s: &Splits) -> Vec<usize> {
        Subset::ALL.iter().map(|&k| s.ids(k).len()).collect()
    }

    #[test]
    fn small_corpus_split_sizes() {
        let corpus = generate_corpus(&CorpusSpec {
            size: 180,
            ..Default::default()
        })
        .unwrap();
        let s = split(&corpus, &SplitSpec::default(), 3).unwrap();
        assert_eq!(sizes(&s), vec![54, 18, 54, 18, 36]);
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let corpus = generate_corpus(&CorpusSpec {
            size: 333,
            ..Default::default()
        })
        .unwrap();
        let s = split(&corpus, &SplitSpec::default(), 1).unwrap();
        let mut all: Vec<usize> = Subset::ALL.iter().flat_map(|&k| s.ids(k).to_vec()).collect();
        all.sort_unstable();
        let expected: Vec<usize> = (0..333).collect();
        assert_eq!(all, expected);
    }

    #[test]
    fn too_small_is_rejected() {
        let corpus = generate_corpus(&CorpusSpec {
            size: 9,
            min_len: 6,
            ..Default::default()
        })
        .unwrap();
        assert!(split(&corpus, &SplitSpec::default(), 0).is_err());
    }

    #[test]
    fn apportion_ties_go_low() {
        assert_eq!(apportion(3, &[1.5, 1.5]), vec![2, 1]);
        assert_eq!(apportion(126, &[37.8, 12.6, 37.8, 12.6, 25.2]), vec![38, 13, 38, 12, 25]);
    }
}
