//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored; unknown keys are errors. The
//! output directory is resolved relative to the file that names it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::attack::{AttackTrainOptions, GumbelConfig};
use crate::corpus::{CorpusSpec, SplitSpec};
use crate::error::{Error, Result};
use crate::seqnets::{VictimConfig, VictimTrainOptions, VICTIM_NAMES};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub vocab_size: usize,
    pub motif_count: usize,
    pub motif_min_len: usize,
    pub motif_max_len: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub malware_fraction: f64,
    pub corpus_size: usize,
    pub label_noise: f64,
    /// Defaults to `seed`.
    pub split_seed: Option<u64>,
    pub max_seq_len: usize,
    pub victims: Vec<String>,
    pub hidden: usize,
    pub attn_hidden: usize,
    pub victim_lr: f64,
    pub victim_epochs: usize,
    pub victim_batch: usize,
    pub victim_patience: usize,
    pub victim_restarts: usize,
    pub gen_hidden: usize,
    pub sub_hidden: usize,
    pub sub_attn_hidden: usize,
    pub gen_lr: f64,
    pub sub_lr: f64,
    pub gamma: f64,
    pub temp: f64,
    pub insert_len: usize,
    pub attack_epochs: usize,
    pub attack_batch: usize,
    pub attack_patience: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let corpus = CorpusSpec::default();
        RunConfig {
            seed: 0,
            vocab_size: corpus.vocab_size,
            motif_count: corpus.motif_count,
            motif_min_len: corpus.motif_len.0,
            motif_max_len: corpus.motif_len.1,
            min_len: corpus.min_len,
            max_len: corpus.max_len,
            malware_fraction: corpus.malware_fraction,
            corpus_size: corpus.size,
            label_noise: corpus.label_noise,
            split_seed: None,
            max_seq_len: 200,
            victims: VICTIM_NAMES.iter().map(|s| s.to_string()).collect(),
            hidden: 32,
            attn_hidden: 32,
            victim_lr: 0.01,
            victim_epochs: 60,
            victim_batch: 16,
            victim_patience: 20,
            victim_restarts: 3,
            gen_hidden: 32,
            sub_hidden: 32,
            sub_attn_hidden: 32,
            gen_lr: 0.001,
            sub_lr: 0.001,
            gamma: 0.01,
            temp: 10.0,
            insert_len: 1,
            attack_epochs: 100,
            attack_batch: 16,
            attack_patience: 10,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: std::str::FromStr>(path: &Path, line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("invalid value `{value}` for `{key}`"),
    })
}

impl RunConfig {
    /// Reads a config file over the defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, path, base)
    }

    /// Parses config text; `base` is the directory relative paths resolve against.
    pub fn parse(text: &str, path: &Path, base: &Path) -> Result<Self> {
        let mut c = RunConfig {
            out_dir: base.join("out"),
            ..Default::default()
        };
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            macro_rules! set {
                ($field:ident) => {
                    c.$field = parse_value(path, line_no, key, value)?
                };
            }
            match key {
                "seed" => set!(seed),
                "vocab_size" => set!(vocab_size),
                "motif_count" => set!(motif_count),
                "motif_min_len" => set!(motif_min_len),
                "motif_max_len" => set!(motif_max_len),
                "min_len" => set!(min_len),
                "max_len" => set!(max_len),
                "malware_fraction" => set!(malware_fraction),
                "corpus_size" => set!(corpus_size),
                "label_noise" => set!(label_noise),
                "split_seed" => c.split_seed = Some(parse_value(path, line_no, key, value)?),
                "max_seq_len" => set!(max_seq_len),
                "victims" => {
                    c.victims = value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                }
                "hidden" => set!(hidden),
                "attn_hidden" => set!(attn_hidden),
                "victim_lr" => set!(victim_lr),
                "victim_epochs" => set!(victim_epochs),
                "victim_batch" => set!(victim_batch),
                "victim_patience" => set!(victim_patience),
                "victim_restarts" => set!(victim_restarts),
                "gen_hidden" => set!(gen_hidden),
                "sub_hidden" => set!(sub_hidden),
                "sub_attn_hidden" => set!(sub_attn_hidden),
                "gen_lr" => set!(gen_lr),
                "sub_lr" => set!(sub_lr),
                "gamma" => set!(gamma),
                "temp" => set!(temp),
                "insert_len" => set!(insert_len),
                "attack_epochs" => set!(attack_epochs),
                "attack_batch" => set!(attack_batch),
                "attack_patience" => set!(attack_patience),
                "out_dir" => c.out_dir = base.join(value),
                other => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line_no,
                        message: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus_spec().validate()?;
        self.gumbel().validate()?;
        for name in &self.victims {
            VictimConfig::from_name(name, self.vocab_size)?;
        }
        if self.max_seq_len == 0 {
            return Err(Error::Config("max_seq_len must be positive".into()));
        }
        let positive = [
            ("hidden", self.hidden),
            ("attn_hidden", self.attn_hidden),
            ("gen_hidden", self.gen_hidden),
            ("sub_hidden", self.sub_hidden),
            ("sub_attn_hidden", self.sub_attn_hidden),
            ("victim_batch", self.victim_batch),
            ("victim_restarts", self.victim_restarts),
            ("attack_batch", self.attack_batch),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        for (k, v) in [("victim_lr", self.victim_lr), ("gen_lr", self.gen_lr), ("sub_lr", self.sub_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            vocab_size: self.vocab_size,
            motifs: Vec::new(),
            motif_count: self.motif_count,
            motif_len: (self.motif_min_len, self.motif_max_len),
            min_len: self.min_len,
            max_len: self.max_len,
            malware_fraction: self.malware_fraction,
            size: self.corpus_size,
            label_noise: self.label_noise,
            seed: self.seed,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec::default()
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }

    pub fn gumbel(&self) -> GumbelConfig {
        GumbelConfig {
            temp: self.temp,
            insert_len: self.insert_len,
            gamma: self.gamma,
        }
    }

    pub fn victim_config(&self, name: &str) -> Result<VictimConfig> {
        Ok(VictimConfig::from_name(name, self.vocab_size)?.with_hidden(self.hidden, self.attn_hidden))
    }

    /// Per-victim seed so victims trained in separate processes are
    /// independent of invocation order.
    pub fn victim_seed(&self, name: &str) -> u64 {
        let k = VICTIM_NAMES.iter().position(|n| *n == name).unwrap_or(0) as u64;
        self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k + 1)
    }

    pub fn victim_options(&self, name: &str) -> VictimTrainOptions {
        VictimTrainOptions {
            epochs: self.victim_epochs,
            batch_size: self.victim_batch,
            lr: self.victim_lr,
            patience: self.victim_patience,
            restarts: self.victim_restarts,
            seed: self.victim_seed(name),
            ..Default::default()
        }
    }

    pub fn attack_options(&self, name: &str) -> AttackTrainOptions {
        AttackTrainOptions {
            max_epochs: self.attack_epochs,
            batch_size: self.attack_batch,
            gen_lr: self.gen_lr,
            sub_lr: self.sub_lr,
            patience: self.attack_patience,
            seed: self.victim_seed(name) ^ 0xa77a_c4ed,
            ..Default::default()
        }
    }

    /// The full configuration as config-file text. `out_dir` is written as
    /// given so the dump can be placed where it resolves correctly.
    pub fn render(&self, out_dir: &str) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("vocab_size", self.vocab_size.to_string());
        kv("motif_count", self.motif_count.to_string());
        kv("motif_min_len", self.motif_min_len.to_string());
        kv("motif_max_len", self.motif_max_len.to_string());
        kv("min_len", self.min_len.to_string());
        kv("max_len", self.max_len.to_string());
        kv("malware_fraction", self.malware_fraction.to_string());
        kv("corpus_size", self.corpus_size.to_string());
        kv("label_noise", self.label_noise.to_string());
        kv("split_seed", self.split_seed().to_string());
        kv("max_seq_len", self.max_seq_len.to_string());
        kv("victims", self.victims.join(","));
        kv("hidden", self.hidden.to_string());
        kv("attn_hidden", self.attn_hidden.to_string());
        kv("victim_lr", self.victim_lr.to_string());
        kv("victim_epochs", self.victim_epochs.to_string());
        kv("victim_batch", self.victim_batch.to_string());
        kv("victim_patience", self.victim_patience.to_string());
        kv("victim_restarts", self.victim_restarts.to_string());
        kv("gen_hidden", self.gen_hidden.to_string());
        kv("sub_hidden", self.sub_hidden.to_string());
        kv("sub_attn_hidden", self.sub_attn_hidden.to_string());
        kv("gen_lr", self.gen_lr.to_string());
        kv("sub_lr", self.sub_lr.to_string());
        kv("gamma", self.gamma.to_string());
        kv("temp", self.temp.to_string());
        kv("insert_len", self.insert_len.to_string());
        kv("attack_epochs", self.attack_epochs.to_string());
        kv("attack_batch", self.attack_batch.to_string());
        kv("attack_patience", self.attack_patience.to_string());
        kv("out_dir", out_dir.to_string());
        s
    }

    /// Writes the effective configuration to `path`, which must lie `depth`
    /// directories below the output directory.
    pub fn dump(&self, path: impl AsRef<Path>, depth: usize) -> Result<()> {
        let path = path.as_ref();
        let rel = if depth == 0 {
            ".".to_string()
        } else {
            vec![".."; depth].join("/")
        };
        fs::write(path, self.render(&rel)).map_err(|e| Error::io(path, e))
    }
}
