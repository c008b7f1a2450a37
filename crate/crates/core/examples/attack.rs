//! End to end: train a victim, then train the insertion generator and its
//! substitute against the victim's hard labels only, and compare detection
//! rates before and after the attack.
//!
//! ```bash
//! cargo run --release --example attack
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqadv::attack::{attack_examples, train_attack, AttackTrainOptions, GeneratorBundle, GumbelConfig, Substitute};
use seqadv::corpus::{generate_corpus, split, CorpusSpec, SplitSpec, Subset};
use seqadv::eval::detection_rate;
use seqadv::seqnets::{train_victim, OneHotSequence, VictimConfig, VictimTrainOptions};

fn main() -> seqadv::Result<()> {
    let spec = CorpusSpec {
        vocab_size: 12,
        size: 300,
        motif_count: 1,
        min_len: 8,
        max_len: 20,
        seed: 21,
        ..CorpusSpec::default()
    };
    let m = spec.vocab_size;
    let corpus = generate_corpus(&spec)?;
    let splits = split(&corpus, &SplitSpec::default(), spec.seed)?;
    let part = |s| splits.select(&corpus, s);
    let (victim_train, victim_val) = (part(Subset::VictimTrain)?, part(Subset::VictimVal)?);
    let (attacker_train, attacker_val) = (part(Subset::AttackerTrain)?, part(Subset::AttackerVal)?);
    let test = part(Subset::Test)?;

    let config = VictimConfig::from_name("LSTM-Attention", m)?.with_hidden(16, 16);
    let victim_opts = VictimTrainOptions {
        epochs: 20,
        lr: 0.01,
        patience: 20,
        seed: 2,
        ..VictimTrainOptions::default()
    };
    let victim = train_victim(config, &victim_train, &victim_val, &victim_opts)?.victim;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let gumbel = GumbelConfig {
        temp: 1.0,
        insert_len: 1,
        gamma: 0.01,
    };
    let gen = GeneratorBundle::new(m, 16, gumbel, &mut rng)?;
    let sub = Substitute::new(m, 16, 16, &mut rng);
    let opts = AttackTrainOptions {
        max_epochs: 10,
        gen_lr: 0.01,
        sub_lr: 0.01,
        seed: 3,
        ..AttackTrainOptions::default()
    };
    let run = train_attack(&attacker_train, &attacker_val, &victim, gen, sub, &opts)?;
    for e in &run.log {
        println!(
            "epoch {:>2}  L_S {:.4}  L_G {:.4}  val success {:.3}  queries {}",
            e.epoch, e.mean_substitute_loss, e.mean_generator_loss, e.val_success, e.queries
        );
    }

    let results = attack_examples(&run.generator, &test, opts.seed)?;
    let originals: Vec<&OneHotSequence> = results.iter().map(|r| &r.original).collect();
    let adversarial: Vec<&OneHotSequence> = results.iter().map(|r| &r.adversarial).collect();
    let before = detection_rate(&victim.p_malware_many(&originals)?, 0.5)?;
    let after = detection_rate(&victim.p_malware_many(&adversarial)?, 0.5)?;
    println!("test malware detected: original {:.1}%, adversarial {:.1}%", 100.0 * before, 100.0 * after);
    if let Some(r) = results.first() {
        println!("original    {:?}", r.original.indices());
        println!("adversarial {:?}", r.adversarial.indices());
    }
    Ok(())
}
