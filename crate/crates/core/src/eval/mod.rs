//! AUC, detection rates, cross-victim transfer and CSV reports.

mod metrics;
mod report;

pub use metrics::{auc, detection_rate, ScoredSet};
pub use report::{
    attack_report, emit_report, read_table1, read_table2, transfer_matrix, write_table1,
    write_table2, write_transfer, AttackReport, AttackedSet, AucRow, TransferMatrix,
    TABLE1_FILE, TABLE1_HEADER, TABLE2_FILE, TABLE2_HEADER, TRANSFER_FILE,
};
