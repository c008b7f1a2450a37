use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::RunConfig;
use crate::attack::{
    attack_examples, load_attack, save_attack, train_attack, write_adversarial, AdversarialRecord, AttackEpochLog,
    AttackResult, GeneratorBundle, HardLabelOracle, Substitute,
};
use crate::corpus::{
    generate_corpus, load_corpus, load_splits, save_corpus, save_splits, split, truncate_examples, LabeledExample,
    Splits, Subset,
};
use crate::error::{Error, Result};
use crate::eval::{
    attack_report, auc, emit_report, transfer_matrix, AttackReport, AttackedSet, AucRow, TransferMatrix,
};
use crate::seqnets::{score_examples, OneHotSequence, Victim};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SPLITS_FILE: &str = "splits.json";
pub const RUN_CONFIG_FILE: &str = "run.conf";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const AUC_FILE: &str = "auc.csv";

/// Output directory layout.
///
/// ```text
/// out/corpus.jsonl, out/splits.json, out/run.conf
/// out/victims/<NAME>/{victim.desc, victim.ckpt, train_log.csv, auc.csv, run.conf}
/// out/attacks/<NAME>/{attack.desc, generator.ckpt, substitute.ckpt, train_log.csv, run.conf}
/// out/reports/{table1.csv, table2.csv, transfer.csv, adversarial_<NAME>.jsonl, run.conf}
/// ```
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join(CORPUS_FILE)
    }

    pub fn splits(&self) -> PathBuf {
        self.root.join(SPLITS_FILE)
    }

    pub fn victim_dir(&self, name: &str) -> PathBuf {
        self.root.join("victims").join(name)
    }

    pub fn attack_dir(&self, name: &str) -> PathBuf {
        self.root.join("attacks").join(name)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSummary {
    pub total: usize,
    pub malware: usize,
    /// Subset sizes in [`Subset::ALL`] order.
    pub subsets: [usize; 5],
}

/// Generates the corpus and its split and writes both.
pub fn cmd_corpus(cfg: &RunConfig) -> Result<CorpusSummary> {
    let layout = Layout::new(&cfg.out_dir);
    create_dir(&layout.root)?;
    let mut corpus = generate_corpus(&cfg.corpus_spec())?;
    truncate_examples(&mut corpus, cfg.max_seq_len);
    let splits = split(&corpus, &cfg.split_spec(), cfg.split_seed())?;
    save_corpus(layout.corpus(), &corpus)?;
    save_splits(layout.splits(), &splits)?;
    cfg.dump(layout.root.join(RUN_CONFIG_FILE), 0)?;
    Ok(CorpusSummary {
        total: corpus.len(),
        malware: corpus.iter().filter(|e| e.is_malware()).count(),
        subsets: Subset::ALL.map(|s| splits.ids(s).len()),
    })
}

/// Corpus and split read back from the output directory.
pub struct Data {
    pub corpus: Vec<LabeledExample>,
    pub splits: Splits,
}

impl Data {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let layout = Layout::new(&cfg.out_dir);
        Ok(Data {
            corpus: load_corpus(layout.corpus(), cfg.vocab_size)?,
            splits: load_splits(layout.splits())?,
        })
    }

    pub fn subset(&self, s: Subset) -> Result<Vec<LabeledExample>> {
        self.splits.select(&self.corpus, s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VictimSummary {
    pub config: String,
    pub train_auc: f64,
    pub val_auc: f64,
    pub test_auc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Serialize)]
struct VictimLogRow {
    restart: usize,
    epoch: usize,
    train_loss: f64,
    val_auc: f64,
}

/// Trains one victim on the victim-train subset with early stopping on
/// victim-validation AUC.
pub fn cmd_train_victim(cfg: &RunConfig, name: &str) -> Result<VictimSummary> {
    let config = cfg.victim_config(name)?;
    let data = Data::load(cfg)?;
    let train = data.subset(Subset::VictimTrain)?;
    let val = data.subset(Subset::VictimVal)?;
    let test = data.subset(Subset::Test)?;
    let run = crate::seqnets::train_victim(config, &train, &val, &cfg.victim_options(name))?;

    let dir = Layout::new(&cfg.out_dir).victim_dir(name);
    run.victim.save(&dir)?;
    let log: Vec<VictimLogRow> = run
        .log
        .iter()
        .map(|l| VictimLogRow {
            restart: l.restart,
            epoch: l.epoch,
            train_loss: l.train_loss,
            val_auc: l.val_auc,
        })
        .collect();
    write_rows(&dir.join(TRAIN_LOG_FILE), &log)?;
    let summary = VictimSummary {
        config: name.to_string(),
        train_auc: auc(&score_examples(&run.victim, &train)?)?,
        val_auc: auc(&score_examples(&run.victim, &val)?)?,
        test_auc: auc(&score_examples(&run.victim, &test)?)?,
        best_epoch: run.best_epoch,
        epochs_run: run.log.len(),
    };
    write_rows(&dir.join(AUC_FILE), std::slice::from_ref(&summary))?;
    cfg.dump(dir.join(RUN_CONFIG_FILE), 2)?;
    Ok(summary)
}

/// Loads a saved victim, naming the directory when it is missing.
pub fn load_victim(cfg: &RunConfig, name: &str) -> Result<Victim> {
    let dir = Layout::new(&cfg.out_dir).victim_dir(name);
    if !dir.join(crate::seqnets::CHECKPOINT_FILE).exists() {
        return Err(Error::Checkpoint {
            path: dir.join(crate::seqnets::CHECKPOINT_FILE),
            message: format!("no trained `{name}` victim; run train-victim first"),
        });
    }
    Victim::load(dir)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackSummary {
    pub config: String,
    pub best_epoch: usize,
    pub best_val_success: f64,
    pub log: Vec<AttackEpochLog>,
}

#[derive(Serialize)]
struct AttackLogRow {
    epoch: usize,
    mean_substitute_loss: f64,
    mean_generator_loss: f64,
    val_success: f64,
    queries: usize,
    aborted: String,
}

/// Trains a generator and substitute against a saved victim on the attacker
/// subsets.
pub fn cmd_train_attack(cfg: &RunConfig, name: &str) -> Result<AttackSummary> {
    cfg.victim_config(name)?;
    let victim = load_victim(cfg, name)?;
    if victim.vocab_size() != cfg.vocab_size {
        return Err(Error::Config(format!(
            "victim `{name}` was trained on vocabulary {} but the corpus uses {}",
            victim.vocab_size(),
            cfg.vocab_size
        )));
    }
    let data = Data::load(cfg)?;
    let train = data.subset(Subset::AttackerTrain)?;
    let val = data.subset(Subset::AttackerVal)?;
    let opts = cfg.attack_options(name);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let gen = GeneratorBundle::new(cfg.vocab_size, cfg.gen_hidden, cfg.gumbel(), &mut rng)?;
    let sub = Substitute::new(cfg.vocab_size, cfg.sub_hidden, cfg.sub_attn_hidden, &mut rng);
    let oracle: &dyn HardLabelOracle = &victim;
    let run = train_attack(&train, &val, oracle, gen, sub, &opts)?;

    let dir = Layout::new(&cfg.out_dir).attack_dir(name);
    save_attack(&dir, &run.generator, &run.substitute)?;
    let rows: Vec<AttackLogRow> = run
        .log
        .iter()
        .map(|l| AttackLogRow {
            epoch: l.epoch,
            mean_substitute_loss: l.mean_substitute_loss,
            mean_generator_loss: l.mean_generator_loss,
            val_success: l.val_success,
            queries: l.queries,
            aborted: l.aborted.clone().unwrap_or_default(),
        })
        .collect();
    write_rows(&dir.join(TRAIN_LOG_FILE), &rows)?;
    cfg.dump(dir.join(RUN_CONFIG_FILE), 2)?;
    let best_val_success = run.log[run.best_epoch - 1].val_success;
    Ok(AttackSummary {
        config: name.to_string(),
        best_epoch: run.best_epoch,
        best_val_success,
        log: run.log,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub aucs: Vec<AucRow>,
    pub attacks: Vec<AttackReport>,
    pub transfer: Option<TransferMatrix>,
    pub written: Vec<PathBuf>,
}

struct Attacked {
    train: Vec<AttackResult>,
    test: Vec<AttackResult>,
}

fn attacked_set(results: &[AttackResult]) -> (Vec<OneHotSequence>, Vec<OneHotSequence>, Vec<usize>) {
    (
        results.iter().map(|r| r.original.clone()).collect(),
        results.iter().map(|r| r.adversarial.clone()).collect(),
        results.iter().map(|r| r.samples.len()).collect(),
    )
}

/// Table-1 rows for every requested victim, Table-2 rows for those with a
/// trained attack, and the transfer matrix when two or more are attacked.
pub fn cmd_evaluate(cfg: &RunConfig, only: Option<&str>) -> Result<EvalSummary> {
    let names: Vec<String> = match only {
        Some(n) => {
            cfg.victim_config(n)?;
            vec![n.to_string()]
        }
        None => cfg.victims.clone(),
    };
    let layout = Layout::new(&cfg.out_dir);
    let data = Data::load(cfg)?;
    let victim_train = data.subset(Subset::VictimTrain)?;
    let attacker_train = data.subset(Subset::AttackerTrain)?;
    let test = data.subset(Subset::Test)?;
    let reports = layout.reports_dir();
    create_dir(&reports)?;

    let mut aucs = Vec::new();
    let mut attacks = Vec::new();
    let mut attacked_victims = Vec::new();
    let mut adversarial_sets = Vec::new();
    for name in &names {
        let victim = load_victim(cfg, name)?;
        aucs.push(AucRow {
            config: name.clone(),
            train_auc: auc(&score_examples(&victim, &victim_train)?)?,
            test_auc: auc(&score_examples(&victim, &test)?)?,
        });
        let dir = layout.attack_dir(name);
        if !dir.exists() {
            continue;
        }
        let (gen, sub) = load_attack(&dir)?;
        let seed = cfg.attack_options(name).seed;
        let mut run = Attacked {
            train: attack_examples(&gen, &attacker_train, seed)?,
            test: attack_examples(&gen, &test, seed)?,
        };
        let (tr_o, tr_a, tr_s) = attacked_set(&run.train);
        let (te_o, te_a, te_s) = attacked_set(&run.test);
        attacks.push(attack_report(
            &victim,
            &AttackedSet {
                original: &tr_o,
                adversarial: &tr_a,
                decode_steps: &tr_s,
            },
            &AttackedSet {
                original: &te_o,
                adversarial: &te_a,
                decode_steps: &te_s,
            },
        )?);
        let malware_ids = test.iter().filter(|e| e.is_malware()).map(|e| e.id);
        let mut records = Vec::with_capacity(run.test.len());
        for (r, id) in run.test.iter_mut().zip(malware_ids) {
            r.victim_label = Some(victim.query(&r.adversarial)?);
            r.substitute_p = Some(sub.p_soft(&r.soft)?);
            records.push(AdversarialRecord::from_result(id, r));
        }
        write_adversarial(reports.join(format!("adversarial_{name}.jsonl")), &records)?;
        attacked_victims.push(victim);
        adversarial_sets.push(te_a);
    }

    let transfer = if attacked_victims.len() >= 2 {
        let refs: Vec<&Victim> = attacked_victims.iter().collect();
        Some(transfer_matrix(&refs, &adversarial_sets)?)
    } else {
        None
    };
    let written = emit_report(&reports, &aucs, &attacks, transfer.as_ref())?;
    cfg.dump(reports.join(RUN_CONFIG_FILE), 1)?;
    Ok(EvalSummary {
        aucs,
        attacks,
        transfer,
        written,
    })
}
