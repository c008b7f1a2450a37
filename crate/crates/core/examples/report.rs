//! Rank-based AUC, detection rates and the CSV report layout, on hand-made
//! scores.
//!
//! ```bash
//! cargo run --example report
//! ```

use seqadv::eval::{auc, detection_rate, emit_report, read_table1, AttackReport, AucRow, ScoredSet};

fn main() -> seqadv::Result<()> {
    let scored = ScoredSet::new(vec![(1, 0.9), (1, 0.7), (1, 0.4), (0, 0.4), (0, 0.2), (0, 0.1)])?;
    println!("AUC {:.4} over {} examples ({} positive)", auc(&scored)?, scored.len(), scored.positives());

    let malware_scores = [0.95, 0.81, 0.62, 0.33];
    let adversarial_scores = [0.41, 0.12, 0.66, 0.05];
    let original = detection_rate(&malware_scores, 0.5)?;
    let adversarial = detection_rate(&adversarial_scores, 0.5)?;
    println!("detection rate: original {original:.2}, adversarial {adversarial:.2}");

    let aucs = vec![AucRow {
        config: "LSTM".into(),
        train_auc: 0.99,
        test_auc: auc(&scored)?,
    }];
    let attacks = vec![AttackReport {
        config: "LSTM".into(),
        original_train: original,
        adversarial_train: adversarial,
        original_test: original,
        adversarial_test: adversarial,
        mean_length_inflation: 1.5,
        mean_null_fraction: 0.5,
    }];
    let dir = std::env::temp_dir().join("seqadv-report-example");
    for path in emit_report(&dir, &aucs, &attacks, None)? {
        println!("--- {}", path.display());
        print!("{}", std::fs::read_to_string(&path).expect("report file is readable"));
    }
    println!("read back {} AUC rows", read_table1(dir.join("table1.csv"))?.len());
    Ok(())
}
