//! Reverse-mode gradients on a tiny LSTM classifier, checked against central
//! differences, then a few Adam steps on the same loss.
//!
//! ```bash
//! cargo run --example gradcheck
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqadv::autodiff::{backward, grad_check, Adam, Graph, ParameterStore, Var, DEFAULT_STEP, DEFAULT_TOL};
use seqadv::seqnets::{Direction, Head, OneHotSequence, SequenceClassifier, SequenceInput, VictimConfig};

fn loss(model: &SequenceClassifier, seq: &OneHotSequence, g: &mut Graph, p: &ParameterStore) -> seqadv::Result<Var> {
    let rows: Vec<Var> = seq
        .input_rows(model.config.input_dim)?
        .into_iter()
        .map(|t| g.constant(t))
        .collect();
    let out = model.forward_rows(g, p, &rows)?;
    model.cross_entropy(g, &out, 1)
}

fn main() -> seqadv::Result<()> {
    let config = VictimConfig::new(Direction::Bidirectional, Head::Attention, 5).with_hidden(4, 3);
    let model = SequenceClassifier::new(config, "clf");
    let mut params = model.init(&mut ChaCha8Rng::seed_from_u64(3));
    let seq = OneHotSequence::new(vec![0, 3, 1, 4, 2], 5)?;

    let report = grad_check(|g, p| loss(&model, &seq, g, p), &params, DEFAULT_STEP, DEFAULT_TOL)?;
    println!(
        "checked {} coordinates, max relative error {:.2e}, passed: {}",
        report.checked,
        report.max_error,
        report.passed()
    );

    let mut adam = Adam::new(0.05);
    for step in 0..=20 {
        let mut g = Graph::new();
        let l = loss(&model, &seq, &mut g, &params)?;
        if step % 5 == 0 {
            println!("step {step:>2}  loss {:.6}", g.scalar_value(l));
        }
        let grads = backward(&g, l)?.into_params();
        adam.step(&mut params, &grads)?;
    }
    Ok(())
}
