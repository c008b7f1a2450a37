//! Finite-difference checks of every composed loss on small instances.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqadv::attack::{
    clamped_p, draw_noise, loss_generator, loss_substitute, GeneratorBundle, GumbelConfig, Substitute,
};
use seqadv::autodiff::{grad_check, Graph, ParameterStore, Tensor, Var, DEFAULT_TOL};

// Larger than the default step: round-off, not truncation, dominates on these
// losses when a coordinate's gradient is near 1e-8.
const STEP: f64 = 1e-4;
use seqadv::seqnets::{OneHotSequence, SequenceClassifier, VictimConfig, VICTIM_NAMES};

const M: usize = 5;

fn sequence() -> OneHotSequence {
    OneHotSequence::new(vec![2, 0, 4, 4, 1, 3], M).unwrap()
}

fn one_hot_rows(g: &mut Graph, seq: &OneHotSequence, width: usize) -> Vec<Var> {
    seq.indices()
        .iter()
        .map(|&i| g.constant(Tensor::one_hot(i, width).unwrap()))
        .collect()
}

fn assert_passes(what: &str, report: seqadv::autodiff::GradCheckReport) {
    assert!(
        report.passed(),
        "{what}: max relative error {:.3e} over {} coordinates, worst {:?}",
        report.max_error,
        report.checked,
        report.worst
    );
}

#[test]
fn victim_cross_entropy_all_variants() {
    for name in VICTIM_NAMES {
        let config = VictimConfig::from_name(name, M).unwrap().with_hidden(4, 3);
        let model = SequenceClassifier::new(config, "victim");
        let params = model.init(&mut ChaCha8Rng::seed_from_u64(17));
        let seq = sequence();
        for label in [0u8, 1] {
            let report = grad_check(
                |g, p| {
                    let rows = one_hot_rows(g, &seq, M);
                    let out = model.forward_rows(g, p, &rows)?;
                    model.cross_entropy(g, &out, label)
                },
                &params,
                STEP,
                DEFAULT_TOL,
            )
            .unwrap();
            assert_passes(name, report);
        }
    }
}

fn attack_pair(seed: u64, temp: f64) -> (GeneratorBundle, Substitute) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gumbel = GumbelConfig {
        temp,
        insert_len: 1,
        gamma: 0.5,
    };
    let gen = GeneratorBundle::new(M, 4, gumbel, &mut rng).unwrap();
    let sub = Substitute::new(M, 4, 3, &mut rng);
    (gen, sub)
}

fn with_gen(gen: &GeneratorBundle, p: &ParameterStore) -> GeneratorBundle {
    gen.clone().with_params(p.clone()).unwrap()
}

fn with_sub(sub: &Substitute, p: &ParameterStore) -> Substitute {
    sub.clone().with_params(p.clone()).unwrap()
}

#[test]
fn substitute_loss_on_soft_and_plain_rows() {
    for (seed, temp) in [(1, 1.0), (2, 10.0), (3, 0.5)] {
        let (gen, sub) = attack_pair(seed, temp);
        let seq = sequence();
        let noise = draw_noise(seq.len(), 1, M + 1, &mut ChaCha8Rng::seed_from_u64(seed + 100));
        for v in [0u8, 1] {
            let soft = grad_check(
                |g, p| {
                    let trace = gen.forward(g, &seq, &noise)?;
                    let s = with_sub(&sub, p);
                    let out = s.forward(g, &trace.rows)?;
                    let prob = clamped_p(g, &out)?;
                    loss_substitute(g, prob, v)
                },
                &sub.params,
                STEP,
                DEFAULT_TOL,
            )
            .unwrap();
            assert_passes("L_S soft rows", soft);
            let plain = grad_check(
                |g, p| {
                    let rows = one_hot_rows(g, &seq, M + 1);
                    let s = with_sub(&sub, p);
                    let out = s.forward(g, &rows)?;
                    let prob = clamped_p(g, &out)?;
                    loss_substitute(g, prob, v)
                },
                &sub.params,
                STEP,
                DEFAULT_TOL,
            )
            .unwrap();
            assert_passes("L_S plain rows", plain);
        }
    }
}

#[test]
fn generator_loss_through_gumbel_softmax() {
    for (seed, temp) in [(4, 1.0), (5, 10.0), (6, 0.5)] {
        let (gen, sub) = attack_pair(seed, temp);
        let seq = sequence();
        let noise = draw_noise(seq.len(), 1, M + 1, &mut ChaCha8Rng::seed_from_u64(seed + 100));
        let report = grad_check(
            |g, p| {
                let gen = with_gen(&gen, p);
                let trace = gen.forward(g, &seq, &noise)?;
                let out = sub.forward(g, &trace.rows)?;
                let prob = clamped_p(g, &out)?;
                loss_generator(g, prob, &trace.pis, gen.null_index(), gen.gumbel.gamma)
            },
            &gen.params,
            STEP,
            DEFAULT_TOL,
        )
        .unwrap();
        assert_passes("L_G", report);
    }
}

#[test]
fn generator_loss_with_longer_insertions() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let gumbel = GumbelConfig {
        temp: 2.0,
        insert_len: 3,
        gamma: 0.1,
    };
    let gen = GeneratorBundle::new(M, 3, gumbel, &mut rng).unwrap();
    let sub = Substitute::new(M, 3, 2, &mut rng);
    let seq = OneHotSequence::new(vec![1, 4, 0], M).unwrap();
    let noise = draw_noise(seq.len(), 3, M + 1, &mut rng);
    let report = grad_check(
        |g, p| {
            let gen = with_gen(&gen, p);
            let trace = gen.forward(g, &seq, &noise)?;
            let out = sub.forward(g, &trace.rows)?;
            let prob = clamped_p(g, &out)?;
            loss_generator(g, prob, &trace.pis, gen.null_index(), gen.gumbel.gamma)
        },
        &gen.params,
        STEP,
        DEFAULT_TOL,
    )
    .unwrap();
    assert_passes("L_G with L = 3", report);
}
