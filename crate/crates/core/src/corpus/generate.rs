use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqnets::OneHotSequence;

pub const BENIGN: u8 = 0;
pub const MALWARE: u8 = 1;

/// How a synthetic example was produced.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Index of the planted motif, `None` for benign background.
    pub motif: Option<usize>,
    /// Start position of the planted motif.
    pub offset: Option<usize>,
    /// Whether label noise flipped the label.
    #[serde(default)]
    pub flipped: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub id: usize,
    pub sequence: OneHotSequence,
    pub label: u8,
    pub provenance: Provenance,
}

impl LabeledExample {
    pub fn is_malware(&self) -> bool {
        self.label == MALWARE
    }
}

/// Parameters of the planted-motif corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub vocab_size: usize,
    /// Explicit motifs; when empty, `motif_count` motifs are drawn from the seed.
    pub motifs: Vec<Vec<usize>>,
    pub motif_count: usize,
    pub motif_len: (usize, usize),
    pub min_len: usize,
    pub max_len: usize,
    pub malware_fraction: f64,
    pub size: usize,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            vocab_size: 30,
            motifs: Vec::new(),
            motif_count: 5,
            motif_len: (4, 6),
            min_len: 20,
            max_len: 100,
            malware_fraction: 0.7,
            size: 1000,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

/// Independent stream for item `index` under `seed`.
pub(crate) fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 2 {
            return bad(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if !(self.malware_fraction > 0.0 && self.malware_fraction < 1.0) {
            return bad(format!("malware_fraction must lie in (0, 1), got {}", self.malware_fraction));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad(format!("label_noise must lie in [0, 1], got {}", self.label_noise));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("invalid length range {}..={}", self.min_len, self.max_len));
        }
        if self.size == 0 {
            return bad("corpus size must be positive".into());
        }
        if self.motifs.is_empty() {
            let (lo, hi) = self.motif_len;
            if self.motif_count == 0 || lo == 0 || lo > hi {
                return bad(format!("invalid motif settings: count {}, length {lo}..={hi}", self.motif_count));
            }
            if hi > self.min_len {
                return bad(format!("motif length {hi} exceeds minimum sequence length {}", self.min_len));
            }
        }
        for (k, m) in self.motifs.iter().enumerate() {
            if m.is_empty() {
                return bad(format!("motif {k} is empty"));
            }
            if m.len() > self.min_len {
                return bad(format!(
                    "motif {k} has length {} which exceeds minimum sequence length {}",
                    m.len(),
                    self.min_len
                ));
            }
            if let Some(&i) = m.iter().find(|&&i| i >= self.vocab_size) {
                return Err(Error::SymbolRange {
                    index: i,
                    limit: self.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// The explicit motifs, or the seed-derived default set (distinct motifs).
    pub fn resolve_motifs(&self) -> Vec<Vec<usize>> {
        if !self.motifs.is_empty() {
            return self.motifs.clone();
        }
        let mut rng = stream_rng(self.seed, u64::MAX - 1);
        let mut motifs: Vec<Vec<usize>> = Vec::with_capacity(self.motif_count);
        while motifs.len() < self.motif_count {
            let len = rng.gen_range(self.motif_len.0..=self.motif_len.1);
            let m: Vec<usize> = (0..len).map(|_| rng.gen_range(0..self.vocab_size)).collect();
            if !motifs.contains(&m) {
                motifs.push(m);
            }
        }
        motifs
    }

    pub fn malware_count(&self) -> usize {
        (self.size as f64 * self.malware_fraction).round() as usize
    }
}

/// Whether `motif` occurs contiguously in `seq`.
pub fn contains_motif(seq: &[usize], motif: &[usize]) -> bool {
    !motif.is_empty() && seq.windows(motif.len()).any(|w| w == motif)
}

/// Exact-substring scanner: 1.0 if any motif occurs, else 0.0.
pub fn motif_scan_score(seq: &[usize], motifs: &[Vec<usize>]) -> f64 {
    if motifs.iter().any(|m| contains_motif(seq, m)) {
        1.0
    } else {
        0.0
    }
}

const MAX_BACKGROUND_ATTEMPTS: usize = 10_000;

/// Benign sequences are i.i.d. uniform symbols containing no motif; malware
/// sequences are the same background with one uniformly chosen motif written
/// contiguously at a uniform position. Deterministic per seed.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<LabeledExample>> {
    spec.validate()?;
    let motifs = spec.resolve_motifs();
    let n_mal = spec.malware_count();

    let mut labels: Vec<u8> = (0..spec.size)
        .map(|i| if i < n_mal { MALWARE } else { BENIGN })
        .collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

    labels
        .iter()
        .enumerate()
        .map(|(id, &label)| {
            let mut rng = stream_rng(spec.seed, id as u64);
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let mut attempts = 0;
            let mut seq = loop {
                let s: Vec<usize> = (0..len).map(|_| rng.gen_range(0..spec.vocab_size)).collect();
                if label == MALWARE || motif_scan_score(&s, &motifs) == 0.0 {
                    break s;
                }
                attempts += 1;
                if attempts >= MAX_BACKGROUND_ATTEMPTS {
                    return Err(Error::Config(
                        "could not draw motif-free background; motifs are too short for this vocabulary".into(),
                    ));
                }
            };
            let mut provenance = Provenance::default();
            if label == MALWARE {
                let k = rng.gen_range(0..motifs.len());
                let offset = rng.gen_range(0..=len - motifs[k].len());
                seq[offset..offset + motifs[k].len()].copy_from_slice(&motifs[k]);
                provenance.motif = Some(k);
                provenance.offset = Some(offset);
            }
            let mut label = label;
            if spec.label_noise > 0.0 && rng.gen_bool(spec.label_noise) {
                label = 1 - label;
                provenance.flipped = true;
            }
            Ok(LabeledExample {
                id,
                sequence: OneHotSequence::new(seq, spec.vocab_size)?,
                label,
                provenance,
            })
        })
        .collect()
}

/// Caps every sequence at `cap` symbols.
pub fn truncate_examples(examples: &mut [LabeledExample], cap: usize) {
    for e in examples.iter_mut() {
        if e.sequence.len() > cap {
            e.sequence = e.sequence.truncated(cap);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = CorpusSpec {
            size: 50,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(generate_corpus(&spec).unwrap(), generate_corpus(&spec).unwrap());
        let other = CorpusSpec { seed: 10, ..spec.clone() };
        assert_ne!(generate_corpus(&spec).unwrap(), generate_corpus(&other).unwrap());
    }

    #[test]
    fn malware_contains_its_motif() {
        let spec = CorpusSpec {
            size: 200,
            seed: 1,
            ..Default::default()
        };
        let motifs = spec.resolve_motifs();
        for e in generate_corpus(&spec).unwrap() {
            match e.provenance.motif {
                Some(k) => assert!(contains_motif(e.sequence.indices(), &motifs[k])),
                None => assert_eq!(motif_scan_score(e.sequence.indices(), &motifs), 0.0),
            }
            assert!((20..=100).contains(&e.sequence.len()));
        }
    }

    #[test]
    fn malware_count_follows_fraction() {
        let corpus = generate_corpus(&CorpusSpec::default()).unwrap();
        assert_eq!(corpus.len(), 1000);
        assert_eq!(corpus.iter().filter(|e| e.is_malware()).count(), 700);
    }

    #[test]
    fn long_motif_rejected() {
        let spec = CorpusSpec {
            motifs: vec![vec![1; 25]],
            ..Default::default()
        };
        assert!(spec.validate().unwrap_err().to_string().contains("exceeds minimum"));
    }

    #[test]
    fn label_noise_flips_some_labels() {
        let spec = CorpusSpec {
            size: 400,
            label_noise: 0.25,
            ..Default::default()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let flipped = corpus.iter().filter(|e| e.provenance.flipped).count();
        assert!((60..140).contains(&flipped), "{flipped}");
        for e in &corpus {
            let planted = e.provenance.motif.is_some() as u8;
            assert_eq!(e.label == planted, !e.provenance.flipped);
        }
    }
}
