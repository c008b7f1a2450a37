use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::metrics::detection_rate;
use crate::error::{Error, Result};
use crate::seqnets::{OneHotSequence, Victim, MALWARE_THRESHOLD};

pub const TABLE1_FILE: &str = "table1.csv";
pub const TABLE2_FILE: &str = "table2.csv";
pub const TRANSFER_FILE: &str = "transfer.csv";

pub const TABLE1_HEADER: [&str; 3] = ["config", "train_auc", "test_auc"];
pub const TABLE2_HEADER: [&str; 7] = [
    "config",
    "original_train",
    "adversarial_train",
    "original_test",
    "adversarial_test",
    "mean_length_inflation",
    "mean_null_fraction",
];

/// One victim's AUC row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub config: String,
    pub train_auc: f64,
    pub test_auc: f64,
}

/// Detection rates of one victim before and after the attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub config: String,
    pub original_train: f64,
    pub adversarial_train: f64,
    pub original_test: f64,
    pub adversarial_test: f64,
    /// Mean of `len(adversarial) / len(original)`.
    pub mean_length_inflation: f64,
    /// Mean fraction of decode steps that sampled the null symbol.
    pub mean_null_fraction: f64,
}

/// Original and adversarial malware for one split, aligned by position.
pub struct AttackedSet<'a> {
    pub original: &'a [OneHotSequence],
    pub adversarial: &'a [OneHotSequence],
    /// Number of decode steps per example (`T * L`).
    pub decode_steps: &'a [usize],
}

impl AttackedSet<'_> {
    fn check(&self) -> Result<()> {
        let n = self.original.len();
        if self.adversarial.len() != n || self.decode_steps.len() != n {
            return Err(Error::Metric(format!(
                "attacked set sizes disagree: {} original, {} adversarial, {} step counts",
                n,
                self.adversarial.len(),
                self.decode_steps.len()
            )));
        }
        Ok(())
    }
}

fn rate(victim: &Victim, seqs: &[OneHotSequence]) -> Result<f64> {
    let refs: Vec<&OneHotSequence> = seqs.iter().collect();
    detection_rate(&victim.p_malware_many(&refs)?, MALWARE_THRESHOLD)
}

/// Builds the detection-rate row for one victim. Length inflation and null
/// fraction are averaged over the test split.
pub fn attack_report(victim: &Victim, train: &AttackedSet, test: &AttackedSet) -> Result<AttackReport> {
    train.check()?;
    test.check()?;
    let n = test.original.len().max(1) as f64;
    let mean_length_inflation = test
        .original
        .iter()
        .zip(test.adversarial)
        .map(|(o, a)| a.len() as f64 / o.len() as f64)
        .sum::<f64>()
        / n;
    let mean_null_fraction = test
        .original
        .iter()
        .zip(test.adversarial)
        .zip(test.decode_steps)
        .map(|((o, a), &steps)| {
            if steps == 0 {
                0.0
            } else {
                (steps - (a.len() - o.len())) as f64 / steps as f64
            }
        })
        .sum::<f64>()
        / n;
    Ok(AttackReport {
        config: victim.config().name().to_string(),
        original_train: rate(victim, train.original)?,
        adversarial_train: rate(victim, train.adversarial)?,
        original_test: rate(victim, test.original)?,
        adversarial_test: rate(victim, test.adversarial)?,
        mean_length_inflation,
        mean_null_fraction,
    })
}

/// `matrix[i][j]`: detection rate of victim `j` on the adversarial examples
/// crafted against victim `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferMatrix {
    pub names: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

pub fn transfer_matrix(victims: &[&Victim], adversarial: &[Vec<OneHotSequence>]) -> Result<TransferMatrix> {
    if victims.len() != adversarial.len() {
        return Err(Error::Metric(format!(
            "{} victims but {} adversarial sets",
            victims.len(),
            adversarial.len()
        )));
    }
    let matrix = adversarial
        .iter()
        .map(|set| victims.iter().map(|v| rate(v, set)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferMatrix {
        names: victims.iter().map(|v| v.config().name().to_string()).collect(),
        matrix,
    })
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    r.deserialize()
        .enumerate()
        .map(|(i, rec)| {
            rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_table1(path: impl AsRef<Path>, rows: &[AucRow]) -> Result<()> {
    write_csv(path.as_ref(), &TABLE1_HEADER, rows)
}

pub fn read_table1(path: impl AsRef<Path>) -> Result<Vec<AucRow>> {
    read_csv(path.as_ref())
}

pub fn write_table2(path: impl AsRef<Path>, reports: &[AttackReport]) -> Result<()> {
    write_csv(path.as_ref(), &TABLE2_HEADER, reports)
}

pub fn read_table2(path: impl AsRef<Path>) -> Result<Vec<AttackReport>> {
    read_csv(path.as_ref())
}

/// Square matrix with a leading `source` column naming the attacked victim.
pub fn write_transfer(path: impl AsRef<Path>, t: &TransferMatrix) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["source".to_string()];
    header.extend(t.names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (name, row) in t.names.iter().zip(&t.matrix) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `table1.csv`, `table2.csv` and, when given, `transfer.csv` into
/// `dir` (created if missing). Returns the written paths.
pub fn emit_report(
    dir: impl AsRef<Path>,
    aucs: &[AucRow],
    attacks: &[AttackReport],
    transfer: Option<&TransferMatrix>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = vec![dir.join(TABLE1_FILE), dir.join(TABLE2_FILE)];
    write_table1(&written[0], aucs)?;
    write_table2(&written[1], attacks)?;
    if let Some(t) = transfer {
        let p = dir.join(TRANSFER_FILE);
        write_transfer(&p, t)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqnets::VictimConfig;

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(dir.path(), &[], &[], None).unwrap();
        let t1 = fs::read_to_string(dir.path().join(TABLE1_FILE)).unwrap();
        assert_eq!(t1, "config,train_auc,test_auc\n");
        let t2 = fs::read_to_string(dir.path().join(TABLE2_FILE)).unwrap();
        assert_eq!(t2.lines().count(), 1);
        assert!(read_table2(dir.path().join(TABLE2_FILE)).unwrap().is_empty());
    }

    #[test]
    fn tables_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let aucs = vec![AucRow {
            config: "LSTM".into(),
            train_auc: 0.1 + 0.2,
            test_auc: 1.0 / 3.0,
        }];
        let attacks = vec![AttackReport {
            config: "BiLSTM".into(),
            original_train: 0.9,
            adversarial_train: 0.05,
            original_test: 0.925,
            adversarial_test: 0.0125,
            mean_length_inflation: 1.75,
            mean_null_fraction: 0.25,
        }];
        emit_report(dir.path(), &aucs, &attacks, None).unwrap();
        assert_eq!(read_table1(dir.path().join(TABLE1_FILE)).unwrap(), aucs);
        assert_eq!(read_table2(dir.path().join(TABLE2_FILE)).unwrap(), attacks);
    }

    #[test]
    fn transfer_diagonal_and_shape() {
        let cfg = VictimConfig::from_name("LSTM", 3).unwrap().with_hidden(2, 2);
        let zero = Victim::zeros(cfg.clone());
        let random = Victim::random(cfg, 4);
        let set: Vec<OneHotSequence> = (0..3)
            .map(|k| OneHotSequence::new(vec![k, 1, 2], 3).unwrap())
            .collect();
        let t = transfer_matrix(&[&zero, &random], &[set.clone(), set.clone()]).unwrap();
        assert_eq!(t.matrix.len(), 2);
        assert!(t.matrix.iter().all(|r| r.len() == 2));
        // The zero victim scores exactly 0.5, which counts as detected.
        assert_eq!(t.matrix[0][0], 1.0);
        assert_eq!(t.matrix[1][0], 1.0);
    }
}
