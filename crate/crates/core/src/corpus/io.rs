//! JSON-lines corpus files and JSON split files.
//!
//! Corpus: one object per line, `{"id":..,"label":..,"indices":[..],"provenance":{..}}`.
//! Splits: a single object mapping each subset name to its list of ids.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LabeledExample, Provenance, Splits};
use crate::error::{Error, Result};
use crate::seqnets::OneHotSequence;

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    id: usize,
    label: u8,
    indices: Vec<usize>,
    provenance: Provenance,
}

pub fn save_corpus(path: impl AsRef<Path>, examples: &[LabeledExample]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in examples {
        let rec = ExampleRecord {
            id: e.id,
            label: e.label,
            indices: e.sequence.indices().to_vec(),
            provenance: e.provenance.clone(),
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a corpus, checking every symbol against `vocab_size`.
pub fn load_corpus(path: impl AsRef<Path>, vocab_size: usize) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: ExampleRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if rec.label > 1 {
            return Err(parse_err(format!("label {} is not 0 or 1", rec.label)));
        }
        let sequence = OneHotSequence::new(rec.indices, vocab_size).map_err(|e| parse_err(e.to_string()))?;
        out.push(LabeledExample {
            id: rec.id,
            sequence,
            label: rec.label,
            provenance: rec.provenance,
        });
    }
    Ok(out)
}

pub fn save_splits(path: impl AsRef<Path>, splits: &Splits) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(splits).expect("splits serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_splits(path: impl AsRef<Path>) -> Result<Splits> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}
