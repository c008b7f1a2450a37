//! Trains one victim detector on a small corpus and reports train/test AUC.
//!
//! ```bash
//! cargo run --release --example train_victim -- LSTM-Attention
//! ```

use seqadv::corpus::{generate_corpus, split, CorpusSpec, SplitSpec, Subset};
use seqadv::eval::auc;
use seqadv::seqnets::{score_examples, train_victim, VictimConfig, VictimTrainOptions};

fn main() -> seqadv::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "LSTM-Attention".into());
    let spec = CorpusSpec {
        size: 300,
        motif_count: 2,
        min_len: 10,
        max_len: 30,
        seed: 5,
        ..CorpusSpec::default()
    };
    let corpus = generate_corpus(&spec)?;
    let splits = split(&corpus, &SplitSpec::default(), spec.seed)?;
    let train = splits.select(&corpus, Subset::VictimTrain)?;
    let val = splits.select(&corpus, Subset::VictimVal)?;
    let test = splits.select(&corpus, Subset::Test)?;

    let config = VictimConfig::from_name(&name, spec.vocab_size)?.with_hidden(16, 16);
    let opts = VictimTrainOptions {
        epochs: 25,
        lr: 0.01,
        patience: 25,
        seed: 1,
        ..VictimTrainOptions::default()
    };
    let run = train_victim(config, &train, &val, &opts)?;
    for e in &run.log {
        println!("epoch {:>2}  loss {:.4}  val AUC {:.4}", e.epoch, e.train_loss, e.val_auc);
    }
    let train_auc = auc(&score_examples(&run.victim, &train)?)?;
    let test_auc = auc(&score_examples(&run.victim, &test)?)?;
    println!("{name}: best epoch {}, train AUC {train_auc:.4}, test AUC {test_auc:.4}", run.best_epoch);
    Ok(())
}
