//! Invariants checked over randomly generated inputs.

use std::collections::HashSet;

use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqadv::attack::{gumbel_softmax, remove_null, sample_api, sample_gumbel_noise, GeneratorBundle, GumbelConfig};
use seqadv::corpus::{generate_corpus, load_corpus, save_corpus, split, CorpusSpec, SplitSpec, Subset};
use seqadv::eval::{auc, ScoredSet};
use seqadv::seqnets::OneHotSequence;

/// `2 * U` by explicit pair counting: 2 per correctly ordered pair, 1 per tie.
fn pair_count_auc(pairs: &[(u8, f64)]) -> f64 {
    let pos: Vec<f64> = pairs.iter().filter(|p| p.0 == 1).map(|p| p.1).collect();
    let neg: Vec<f64> = pairs.iter().filter(|p| p.0 == 0).map(|p| p.1).collect();
    let mut twice = 0u64;
    for &a in &pos {
        for &b in &neg {
            twice += match a.partial_cmp(&b).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    twice as f64 / (2 * pos.len() * neg.len()) as f64
}

fn is_subsequence(needle: &[usize], hay: &[usize]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

/// Scores drawn from a small grid so ties are common.
fn scored_pairs() -> impl Strategy<Value = Vec<(u8, f64)>> {
    prop::collection::vec((0u8..=1, 0i32..20), 2..200)
        .prop_filter("both classes", |v| v.iter().any(|p| p.0 == 0) && v.iter().any(|p| p.0 == 1))
        .prop_map(|v| v.into_iter().map(|(l, s)| (l, s as f64 / 7.0)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn auc_equals_pair_counting(pairs in scored_pairs()) {
        let expected = pair_count_auc(&pairs);
        prop_assert_eq!(auc(&ScoredSet::new(pairs).unwrap()).unwrap(), expected);
    }

    #[test]
    fn auc_flips_with_labels(pairs in scored_pairs()) {
        let flipped: Vec<(u8, f64)> = pairs.iter().map(|&(l, s)| (1 - l, s)).collect();
        let a = auc(&ScoredSet::new(pairs).unwrap()).unwrap();
        let b = auc(&ScoredSet::new(flipped).unwrap()).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_ignores_monotone_rescaling(pairs in scored_pairs(), scale in 0.01f64..100.0, shift in -5.0f64..5.0) {
        let moved: Vec<(u8, f64)> = pairs.iter().map(|&(l, s)| (l, (s * scale + shift).exp())).collect();
        let a = auc(&ScoredSet::new(pairs).unwrap()).unwrap();
        let b = auc(&ScoredSet::new(moved).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn gumbel_softmax_rows_sum_to_one(
        raw in prop::collection::vec(1e-6f64..1.0, 2..40),
        seed in any::<u64>(),
        temp in 0.01f64..100.0,
    ) {
        let total: f64 = raw.iter().sum();
        let pi: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let z = sample_gumbel_noise(pi.len(), &mut ChaCha8Rng::seed_from_u64(seed));
        let y = gumbel_softmax(&pi, &z, temp).unwrap();
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn lower_temperature_sharpens_the_sample(
        raw in prop::collection::vec(1e-3f64..1.0, 2..20),
        seed in any::<u64>(),
        t1 in 0.05f64..50.0,
        ratio in 1.0f64..10.0,
    ) {
        let total: f64 = raw.iter().sum();
        let pi: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let z = sample_gumbel_noise(pi.len(), &mut ChaCha8Rng::seed_from_u64(seed));
        let hard = sample_api(&pi, &z);
        let cold = gumbel_softmax(&pi, &z, t1).unwrap();
        let hot = gumbel_softmax(&pi, &z, t1 * ratio).unwrap();
        prop_assert!(cold[hard] >= hot[hard] - 1e-12);
        let top = cold.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!((cold[hard] - top).abs() < 1e-12);
    }

    #[test]
    fn generated_sequences_only_insert(
        seed in any::<u64>(),
        vocab in 2usize..12,
        hidden in 1usize..6,
        insert_len in 1usize..4,
        temp in 0.1f64..20.0,
        len in 1usize..15,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gumbel = GumbelConfig { temp, insert_len, gamma: 0.01 };
        let gen = GeneratorBundle::new(vocab, hidden, gumbel, &mut rng).unwrap();
        let idx: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
        let seq = OneHotSequence::new(idx.clone(), vocab).unwrap();
        let r = gen.generate(&seq, &mut rng).unwrap();
        let adv = r.adversarial.indices();
        prop_assert!(is_subsequence(&idx, adv));
        prop_assert_eq!(adv.len(), len + r.samples.len() - r.null_count(vocab));
        prop_assert_eq!(r.samples.len(), len * insert_len);
        prop_assert!(adv.iter().all(|&s| s < vocab));
        let inserted: HashSet<usize> = r.insertion_positions.iter().copied().collect();
        let kept: Vec<usize> = (0..adv.len()).filter(|p| !inserted.contains(p)).map(|p| adv[p]).collect();
        prop_assert_eq!(kept, idx);
    }

    #[test]
    fn removing_null_keeps_originals_in_place(
        original in prop::collection::vec(0usize..6, 1..20),
        insert_len in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<usize> = (0..original.len() * insert_len).map(|_| rng.gen_range(0..=6)).collect();
        let (adv, positions) = remove_null(&original, &samples, insert_len, 6);
        prop_assert!(is_subsequence(&original, &adv));
        prop_assert_eq!(positions.len(), samples.iter().filter(|&&s| s != 6).count());
        for &p in &positions {
            prop_assert!(adv[p] < 6);
        }
    }

    #[test]
    fn split_partitions_and_stratifies(size in 30usize..400, seed in any::<u64>(), frac in 0.2f64..0.8) {
        let spec = CorpusSpec {
            size,
            malware_fraction: frac,
            min_len: 8,
            max_len: 12,
            seed,
            ..CorpusSpec::default()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let splits = split(&corpus, &SplitSpec::default(), seed).unwrap();
        let mut seen = HashSet::new();
        let targets = SplitSpec::default().fractions;
        for (subset, target) in Subset::ALL.iter().zip(targets) {
            let ids = splits.ids(*subset);
            for id in ids {
                prop_assert!(seen.insert(*id), "id {} in two subsets", id);
            }
            prop_assert!((ids.len() as f64 - target * size as f64).abs() <= 1.0 + 1e-9);
        }
        prop_assert_eq!(seen.len(), size);
    }
}

#[test]
fn split_keeps_malware_fraction_on_default_corpus() {
    let corpus = generate_corpus(&CorpusSpec::default()).unwrap();
    let splits = split(&corpus, &SplitSpec::default(), 0).unwrap();
    for subset in Subset::ALL {
        let part = splits.select(&corpus, subset).unwrap();
        let frac = part.iter().filter(|e| e.is_malware()).count() as f64 / part.len() as f64;
        assert!((frac - 0.7).abs() <= 0.02, "{}: {frac}", subset.name());
    }
}

#[test]
fn corpus_round_trips_through_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    let spec = CorpusSpec {
        size: 120,
        label_noise: 0.1,
        seed: 3,
        ..CorpusSpec::default()
    };
    let corpus = generate_corpus(&spec).unwrap();
    save_corpus(&path, &corpus).unwrap();
    assert_eq!(load_corpus(&path, spec.vocab_size).unwrap(), corpus);
}
