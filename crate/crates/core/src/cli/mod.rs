//! The `seqadv` command line: `corpus`, `train-victim`, `train-attack` and
//! `evaluate`, driven by a [`RunConfig`] file plus flag overrides.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 when a
//! command fails at run time.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_corpus, cmd_evaluate, cmd_train_attack, cmd_train_victim, load_victim, AttackSummary, CorpusSummary, Data,
    EvalSummary, Layout, VictimSummary, AUC_FILE, CORPUS_FILE, RUN_CONFIG_FILE, SPLITS_FILE, TRAIN_LOG_FILE,
};
pub use config::RunConfig;

use crate::corpus::Subset;
use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "seqadv", version, about = "Black-box insertion attacks on RNN API-sequence detectors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Victim variant, e.g. `BiLSTM-Attention`.
    #[arg(long, global = true)]
    pub victim: Option<String>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Training epochs for the command being run.
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Gumbel-Softmax temperature.
    #[arg(long, global = true)]
    pub temp: Option<f64>,
    /// Null-symbol regularization weight.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Learning rate for the command being run.
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Symbols decoded after each original call.
    #[arg(long = "insert-len", global = true)]
    pub insert_len: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and its five-way split.
    Corpus,
    /// Train one victim detector (requires --victim).
    TrainVictim,
    /// Train a generator and substitute against a saved victim (requires --victim).
    TrainAttack,
    /// Write AUC, detection-rate and transfer reports.
    Evaluate,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl Cli {
    /// The file configuration with this invocation's flags applied.
    pub fn effective_config(&self) -> crate::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.out_dir = o.clone();
        }
        if let Some(t) = self.temp {
            c.temp = t;
        }
        if let Some(g) = self.gamma {
            c.gamma = g;
        }
        if let Some(l) = self.insert_len {
            c.insert_len = l;
        }
        match self.command {
            Command::TrainAttack => {
                if let Some(e) = self.epochs {
                    c.attack_epochs = e;
                }
                if let Some(lr) = self.lr {
                    c.gen_lr = lr;
                    c.sub_lr = lr;
                }
            }
            _ => {
                if let Some(e) = self.epochs {
                    c.victim_epochs = e;
                }
                if let Some(lr) = self.lr {
                    c.victim_lr = lr;
                }
            }
        }
        c.validate()?;
        Ok(c)
    }
}

fn require_victim(cli: &Cli, cfg: &RunConfig) -> Result<String, Failure> {
    let name = cli
        .victim
        .clone()
        .ok_or_else(|| Failure::Usage("--victim is required for this command".into()))?;
    cfg.victim_config(&name).map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(name)
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let cfg = cli.effective_config().map_err(|e| Failure::Usage(e.to_string()))?;
    match cli.command {
        Command::Corpus => {
            let s = cmd_corpus(&cfg)?;
            println!("wrote {} examples ({} malware) to {}", s.total, s.malware, cfg.out_dir.display());
            for (subset, n) in Subset::ALL.iter().zip(s.subsets) {
                println!("  {:<15} {n}", subset.name());
            }
        }
        Command::TrainVictim => {
            let name = require_victim(cli, &cfg)?;
            let s = cmd_train_victim(&cfg, &name)?;
            println!(
                "{}: best epoch {} of {}, AUC train {:.4} val {:.4} test {:.4}",
                s.config, s.best_epoch, s.epochs_run, s.train_auc, s.val_auc, s.test_auc
            );
        }
        Command::TrainAttack => {
            let name = require_victim(cli, &cfg)?;
            let s = cmd_train_attack(&cfg, &name)?;
            println!(
                "{}: best epoch {} of {}, validation attack success {:.4}",
                s.config,
                s.best_epoch,
                s.log.len(),
                s.best_val_success
            );
        }
        Command::Evaluate => {
            if let Some(n) = &cli.victim {
                cfg.victim_config(n).map_err(|e| Failure::Usage(e.to_string()))?;
            }
            let s = cmd_evaluate(&cfg, cli.victim.as_deref())?;
            for r in &s.aucs {
                println!("{:<17} AUC train {:.4} test {:.4}", r.config, r.train_auc, r.test_auc);
            }
            for r in &s.attacks {
                println!(
                    "{:<17} detection original {:.4}/{:.4} adversarial {:.4}/{:.4} (train/test)",
                    r.config, r.original_train, r.original_test, r.adversarial_train, r.adversarial_test
                );
            }
            for p in &s.written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
