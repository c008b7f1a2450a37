//! The full experiment at default settings: corpus, all six victims, attacks
//! on LSTM-Attention and BiLSTM, then the reports. Wall-clock seconds per
//! stage go to `timings.csv` next to the other outputs.
//!
//! ```bash
//! cargo run --release --example reproduce -- results
//! cargo run --release --example reproduce -- results path/to/run.conf
//! ```

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use seqadv::cli::{cmd_corpus, cmd_evaluate, cmd_train_attack, cmd_train_victim, RunConfig};

const ATTACKED: [&str; 2] = ["LSTM-Attention", "BiLSTM"];

fn main() -> seqadv::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "results".into()));
    let mut cfg = match args.next() {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.out_dir = out.clone();
    cfg.validate()?;

    let mut timings = vec!["stage,name,seconds".to_string()];
    let mut timed = |stage: &str, name: &str, start: Instant| {
        let secs = start.elapsed().as_secs_f64();
        println!("  {stage} {name}: {secs:.1} s");
        timings.push(format!("{stage},{name},{secs:.1}"));
    };

    let t = Instant::now();
    let c = cmd_corpus(&cfg)?;
    println!("corpus: {} examples, {} malware", c.total, c.malware);
    timed("corpus", "-", t);

    for name in cfg.victims.clone() {
        let t = Instant::now();
        let s = cmd_train_victim(&cfg, &name)?;
        println!(
            "{name}: best epoch {} of {}, AUC train {:.4} val {:.4} test {:.4}",
            s.best_epoch, s.epochs_run, s.train_auc, s.val_auc, s.test_auc
        );
        timed("victim", &name, t);
    }

    for name in ATTACKED.iter().filter(|n| cfg.victims.iter().any(|v| v == *n)) {
        let t = Instant::now();
        let s = cmd_train_attack(&cfg, name)?;
        println!(
            "{name}: attack best epoch {} of {}, validation success {:.4}",
            s.best_epoch,
            s.log.len(),
            s.best_val_success
        );
        timed("attack", name, t);
    }

    let t = Instant::now();
    let e = cmd_evaluate(&cfg, None)?;
    for r in &e.attacks {
        println!(
            "{}: detection original {:.4}/{:.4} adversarial {:.4}/{:.4} (train/test)",
            r.config, r.original_train, r.original_test, r.adversarial_train, r.adversarial_test
        );
    }
    timed("evaluate", "-", t);

    let path = out.join("timings.csv");
    fs::write(&path, timings.join("\n") + "\n").expect("timings.csv is writable");
    Ok(())
}
