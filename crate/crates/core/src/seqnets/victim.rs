//! Trained victim detectors: inference, persistence and supervised training.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Direction, Head, OneHotSequence, SequenceClassifier, SequenceInput, VictimConfig};
use crate::autodiff::{backward, checkpoint, Adam, Graph, ParamGrads, ParameterStore, Var};
use crate::corpus::LabeledExample;
use crate::error::{Error, Result};
use crate::eval::{auc, ScoredSet};

pub const CHECKPOINT_FILE: &str = "victim.ckpt";
pub const DESCRIPTOR_FILE: &str = "victim.desc";
const PREFIX: &str = "victim";

/// Decision rule shared by every hard-label consumer.
pub const MALWARE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct Victim {
    classifier: SequenceClassifier,
    params: ParameterStore,
}

impl Victim {
    pub fn new(config: VictimConfig, params: ParameterStore) -> Result<Self> {
        let classifier = SequenceClassifier::new(config, PREFIX);
        let expected = classifier.init_zeros();
        for (name, t) in expected.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::shape(
                    "victim",
                    format!("`{name}` is {:?}, expected {:?}", got.shape(), t.shape()),
                ));
            }
        }
        Ok(Victim { classifier, params })
    }

    pub fn random(config: VictimConfig, seed: u64) -> Self {
        let classifier = SequenceClassifier::new(config, PREFIX);
        let params = classifier.init(&mut ChaCha8Rng::seed_from_u64(seed));
        Victim { classifier, params }
    }

    pub fn zeros(config: VictimConfig) -> Self {
        let classifier = SequenceClassifier::new(config, PREFIX);
        let params = classifier.init_zeros();
        Victim { classifier, params }
    }

    pub fn config(&self) -> &VictimConfig {
        &self.classifier.config
    }

    pub fn classifier(&self) -> &SequenceClassifier {
        &self.classifier
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.classifier.config.input_dim
    }

    pub fn p_malware(&self, seq: &OneHotSequence) -> Result<f64> {
        seq.check_range(self.vocab_size())?;
        self.classifier.p_malware(&self.params, seq)
    }

    /// Scores many sequences in parallel; output order follows input order.
    pub fn p_malware_many(&self, seqs: &[&OneHotSequence]) -> Result<Vec<f64>> {
        seqs.par_iter().map(|s| self.p_malware(s)).collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let c = &self.classifier.config;
        let desc = format!(
            "name = {}\ndirection = {}\nhead = {}\nhidden = {}\nattn_hidden = {}\nvocab = {}\n",
            c.name(),
            c.direction,
            c.head,
            c.hidden,
            c.attn_hidden,
            c.input_dim
        );
        let path = dir.join(DESCRIPTOR_FILE);
        fs::write(&path, desc).map_err(|e| Error::io(&path, e))?;
        checkpoint::save(&self.params, dir.join(CHECKPOINT_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(DESCRIPTOR_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let config = parse_descriptor(&text, &path)?;
        let params = checkpoint::load(dir.join(CHECKPOINT_FILE))?;
        Victim::new(config, params)
    }
}

fn parse_descriptor(text: &str, path: &Path) -> Result<VictimConfig> {
    let mut direction = None;
    let mut head = None;
    let mut hidden = None;
    let mut attn_hidden = None;
    let mut vocab = None;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, format!("expected `key = value`, got `{line}`")))?;
        let value = value.trim();
        let num = |v: &str| v.parse::<usize>().map_err(|_| parse_err(line_no, format!("bad number `{v}`")));
        match key.trim() {
            "name" => {}
            "direction" => direction = Some(value.parse::<Direction>()?),
            "head" => head = Some(value.parse::<Head>()?),
            "hidden" => hidden = Some(num(value)?),
            "attn_hidden" => attn_hidden = Some(num(value)?),
            "vocab" => vocab = Some(num(value)?),
            other => return Err(parse_err(line_no, format!("unknown key `{other}`"))),
        }
    }
    let missing = |k: &str| parse_err(0, format!("missing `{k}`"));
    Ok(VictimConfig {
        direction: direction.ok_or_else(|| missing("direction"))?,
        head: head.ok_or_else(|| missing("head"))?,
        hidden: hidden.ok_or_else(|| missing("hidden"))?,
        attn_hidden: attn_hidden.ok_or_else(|| missing("attn_hidden"))?,
        input_dim: vocab.ok_or_else(|| missing("vocab"))?,
    })
}

#[derive(Clone, Debug)]
pub struct VictimTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs without validation-AUC improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Independent initialisations; the one with the best validation AUC wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for VictimTrainOptions {
    fn default() -> Self {
        VictimTrainOptions {
            epochs: 30,
            batch_size: 16,
            lr: 0.001,
            patience: 5,
            clip_norm: Some(5.0),
            restarts: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VictimEpochLog {
    pub restart: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Clone, Debug)]
pub struct VictimTraining {
    /// Parameters from the epoch with the best validation AUC.
    pub victim: Victim,
    pub log: Vec<VictimEpochLog>,
    pub best_epoch: usize,
}

/// Scores a labelled set with a victim.
pub fn score_examples(victim: &Victim, examples: &[LabeledExample]) -> Result<ScoredSet> {
    let seqs: Vec<&OneHotSequence> = examples.iter().map(|e| &e.sequence).collect();
    let scores = victim.p_malware_many(&seqs)?;
    ScoredSet::new(examples.iter().map(|e| e.label).zip(scores).collect())
}

fn example_grads(victim: &Victim, ex: &LabeledExample) -> Result<(f64, ParamGrads)> {
    let classifier = victim.classifier();
    let mut g = Graph::new();
    let rows: Vec<Var> = ex
        .sequence
        .input_rows(classifier.config.input_dim)?
        .into_iter()
        .map(|t| g.constant(t))
        .collect();
    let out = classifier.forward_rows(&mut g, victim.params(), &rows)?;
    let loss = classifier.cross_entropy(&mut g, &out, ex.label)?;
    let value = g.scalar_value(loss);
    Ok((value, backward(&g, loss)?.into_params()))
}

/// Global L2 norm rescaling.
pub(crate) fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|(_, t)| t.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
}

/// Minibatch Adam on cross-entropy with early stopping on validation AUC,
/// repeated from `opts.restarts` initialisations.
pub fn train_victim(
    config: VictimConfig,
    train: &[LabeledExample],
    val: &[LabeledExample],
    opts: &VictimTrainOptions,
) -> Result<VictimTraining> {
    if train.is_empty() {
        return Err(Error::Config("victim training set is empty".into()));
    }
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    for restart in 0..opts.restarts.max(1) {
        let seed = opts.seed.wrapping_add(restart as u64 * 0x632b_e59b_d9b4_e019);
        let (val_auc, epoch, params) = train_once(&config, train, val, opts, seed, restart, &mut log)?;
        if best.as_ref().is_none_or(|(b, _, _)| val_auc > *b) {
            best = Some((val_auc, epoch, params));
        }
    }
    let (_, best_epoch, params) = best.ok_or_else(|| Error::Config("victim epochs must be positive".into()))?;
    Ok(VictimTraining {
        victim: Victim::new(config, params)?,
        log,
        best_epoch,
    })
}

fn train_once(
    config: &VictimConfig,
    train: &[LabeledExample],
    val: &[LabeledExample],
    opts: &VictimTrainOptions,
    seed: u64,
    restart: usize,
    log: &mut Vec<VictimEpochLog>,
) -> Result<(f64, usize, ParameterStore)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut victim = Victim::random(config.clone(), seed ^ 0x5e_ed0f_71c7);
    let mut adam = Adam::new(opts.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, ParameterStore)> = None;

    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(opts.batch_size.max(1)) {
            let results: Vec<(f64, ParamGrads)> = batch
                .par_iter()
                .map(|&i| example_grads(&victim, &train[i]))
                .collect::<Result<_>>()?;
            let mut grads = ParamGrads::zeros_like(victim.params());
            for (loss, g) in &results {
                total_loss += loss;
                grads.accumulate(g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max) = opts.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            adam.step(victim.params_mut(), &grads)?;
        }
        let val_auc = auc(&score_examples(&victim, val)?)?;
        log.push(VictimEpochLog {
            restart,
            epoch,
            train_loss: total_loss / train.len() as f64,
            val_auc,
        });
        let improved = best.as_ref().is_none_or(|(b, _, _)| val_auc > *b);
        if improved {
            best = Some((val_auc, epoch, victim.params().clone()));
        } else if epoch - best.as_ref().map_or(0, |b| b.1) >= opts.patience {
            break;
        }
    }
    best.ok_or_else(|| Error::Config("victim epochs must be positive".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = VictimConfig::from_name("BiLSTM-Attention", 6).unwrap().with_hidden(4, 3);
        let v = Victim::random(cfg.clone(), 7);
        v.save(dir.path()).unwrap();
        let back = Victim::load(dir.path()).unwrap();
        assert_eq!(back.config(), &cfg);
        assert_eq!(back, v);
    }

    #[test]
    fn descriptor_rejects_unknown_keys() {
        let text = "direction = forward\nhead = average\nhidden = 2\nattn_hidden = 2\nvocab = 3\ncolour = red\n";
        let err = parse_descriptor(text, Path::new("d")).unwrap_err().to_string();
        assert!(err.contains("colour"));
    }

    #[test]
    fn out_of_range_symbol_rejected() {
        let v = Victim::zeros(VictimConfig::from_name("LSTM", 3).unwrap().with_hidden(2, 2));
        let seq = OneHotSequence::new(vec![0, 5], 6).unwrap();
        assert!(matches!(v.p_malware(&seq), Err(Error::SymbolRange { index: 5, limit: 3 })));
    }
}
