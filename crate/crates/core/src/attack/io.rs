//! Attack checkpoints and adversarial-example files.
//!
//! An attack directory holds `generator.ckpt`, `substitute.ckpt` and
//! `attack.desc` (`key = value` lines describing both models). Adversarial
//! examples are JSON lines:
//! `{"id":..,"original":[..],"adversarial":[..],"insertion_positions":[..],"v":..,"p_s":..}`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generator::{AttackResult, GeneratorBundle};
use super::gumbel::GumbelConfig;
use super::substitute::Substitute;
use crate::autodiff::checkpoint;
use crate::error::{Error, Result};

pub const GENERATOR_FILE: &str = "generator.ckpt";
pub const SUBSTITUTE_FILE: &str = "substitute.ckpt";
pub const ATTACK_DESC_FILE: &str = "attack.desc";

const DESC_KEYS: [&str; 7] = ["vocab", "gen_hidden", "sub_hidden", "sub_attn_hidden", "temp", "insert_len", "gamma"];

pub fn save_attack(dir: impl AsRef<Path>, gen: &GeneratorBundle, sub: &Substitute) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let c = &sub.classifier.config;
    let desc = format!(
        "vocab = {}\ngen_hidden = {}\nsub_hidden = {}\nsub_attn_hidden = {}\ntemp = {}\ninsert_len = {}\ngamma = {}\n",
        gen.vocab_size, gen.hidden, c.hidden, c.attn_hidden, gen.gumbel.temp, gen.gumbel.insert_len, gen.gumbel.gamma
    );
    let path = dir.join(ATTACK_DESC_FILE);
    fs::write(&path, desc).map_err(|e| Error::io(&path, e))?;
    checkpoint::save(&gen.params, dir.join(GENERATOR_FILE))?;
    checkpoint::save(&sub.params, dir.join(SUBSTITUTE_FILE))
}

pub fn load_attack(dir: impl AsRef<Path>) -> Result<(GeneratorBundle, Substitute)> {
    let dir = dir.as_ref();
    let path = dir.join(ATTACK_DESC_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut values = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.clone(),
            line: i + 1,
            message,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let k = k.trim();
        if !DESC_KEYS.contains(&k) {
            return Err(err(format!("unknown key `{k}`")));
        }
        values.insert(k.to_string(), (i + 1, v.trim().to_string()));
    }
    let get = |k: &str| -> Result<(usize, &str)> {
        values.get(k).map(|(l, v)| (*l, v.as_str())).ok_or_else(|| Error::Parse {
            path: path.clone(),
            line: 0,
            message: format!("missing `{k}`"),
        })
    };
    let num = |k: &str| -> Result<usize> {
        let (line, v) = get(k)?;
        v.parse().map_err(|_| Error::Parse {
            path: path.clone(),
            line,
            message: format!("bad integer `{v}` for `{k}`"),
        })
    };
    let real = |k: &str| -> Result<f64> {
        let (line, v) = get(k)?;
        v.parse().map_err(|_| Error::Parse {
            path: path.clone(),
            line,
            message: format!("bad number `{v}` for `{k}`"),
        })
    };
    let gumbel = GumbelConfig {
        temp: real("temp")?,
        insert_len: num("insert_len")?,
        gamma: real("gamma")?,
    };
    let vocab = num("vocab")?;
    let gen = GeneratorBundle::zeros(vocab, num("gen_hidden")?, gumbel)?
        .with_params(checkpoint::load(dir.join(GENERATOR_FILE))?)?;
    let sub = Substitute::zeros(vocab, num("sub_hidden")?, num("sub_attn_hidden")?)
        .with_params(checkpoint::load(dir.join(SUBSTITUTE_FILE))?)?;
    Ok((gen, sub))
}

/// One line of an adversarial-example file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialRecord {
    pub id: usize,
    pub original: Vec<usize>,
    pub adversarial: Vec<usize>,
    pub insertion_positions: Vec<usize>,
    pub v: Option<u8>,
    pub p_s: Option<f64>,
}

impl AdversarialRecord {
    pub fn from_result(id: usize, r: &AttackResult) -> Self {
        AdversarialRecord {
            id,
            original: r.original.indices().to_vec(),
            adversarial: r.adversarial.indices().to_vec(),
            insertion_positions: r.insertion_positions.clone(),
            v: r.victim_label,
            p_s: r.substitute_p,
        }
    }
}

pub fn write_adversarial(path: impl AsRef<Path>, records: &[AdversarialRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_adversarial(path: impl AsRef<Path>) -> Result<Vec<AdversarialRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::seqnets::OneHotSequence;

    #[test]
    fn attack_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = GumbelConfig {
            temp: 0.3,
            insert_len: 2,
            gamma: 0.001,
        };
        let gen = GeneratorBundle::new(5, 3, cfg, &mut rng).unwrap();
        let sub = Substitute::new(5, 4, 2, &mut rng);
        save_attack(dir.path(), &gen, &sub).unwrap();
        let (g2, s2) = load_attack(dir.path()).unwrap();
        assert_eq!(g2, gen);
        assert_eq!(s2, sub);
    }

    #[test]
    fn adversarial_records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adv.jsonl");
        let gen = GeneratorBundle::zeros(4, 2, GumbelConfig::default()).unwrap();
        let seq = OneHotSequence::new(vec![1, 2, 3], 4).unwrap();
        let mut r = gen.generate(&seq, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        r.victim_label = Some(0);
        r.substitute_p = Some(0.125);
        let recs = vec![AdversarialRecord::from_result(7, &r)];
        write_adversarial(&path, &recs).unwrap();
        assert_eq!(read_adversarial(&path).unwrap(), recs);
    }
}
