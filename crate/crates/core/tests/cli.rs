//! The `seqadv` command line: exit codes and a small end-to-end run.

use std::fs;
use std::path::Path;

use seqadv::cli::{run, Layout, RunConfig, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use seqadv::eval::{read_table1, read_table2};
use seqadv::seqnets::{Victim, VictimConfig};

const SMALL: &str = "\
# tiny corpus, quick to train
vocab_size = 8
motif_count = 2
motif_min_len = 3
motif_max_len = 3
min_len = 5
max_len = 10
corpus_size = 100
victims = LSTM, BiLSTM-Attention
hidden = 4
attn_hidden = 3
gen_hidden = 4
sub_hidden = 4
sub_attn_hidden = 3
victim_epochs = 2
attack_epochs = 1
attack_batch = 8
";

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.conf");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

fn seqadv(args: &[&str]) -> i32 {
    run(std::iter::once("seqadv").chain(args.iter().copied()))
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(seqadv(&["--help"]), EXIT_OK);
    assert_eq!(seqadv(&[]), EXIT_USAGE);
    assert_eq!(seqadv(&["no-such-command"]), EXIT_USAGE);
    assert_eq!(seqadv(&["train-victim", "--epochs", "many"]), EXIT_USAGE);
}

#[test]
fn bad_configuration_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "colour = blue\n");
    assert_eq!(seqadv(&["corpus", "--config", &cfg]), EXIT_USAGE);
    let cfg = write_config(dir.path(), "");
    assert_eq!(seqadv(&["train-victim", "--config", &cfg]), EXIT_USAGE);
    assert_eq!(seqadv(&["train-victim", "--config", &cfg, "--victim", "GRU"]), EXIT_USAGE);
    assert_eq!(seqadv(&["corpus", "--config", &cfg, "--temp", "0"]), EXIT_USAGE);
    let missing = dir.path().join("absent.conf");
    assert_eq!(seqadv(&["corpus", "--config", missing.to_str().unwrap()]), EXIT_USAGE);
}

#[test]
fn missing_inputs_are_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    assert_eq!(seqadv(&["train-victim", "--config", &cfg, "--victim", "LSTM"]), EXIT_FAILURE);
    assert_eq!(seqadv(&["corpus", "--config", &cfg]), EXIT_OK);
    assert_eq!(seqadv(&["train-attack", "--config", &cfg, "--victim", "LSTM"]), EXIT_FAILURE);
    assert_eq!(seqadv(&["evaluate", "--config", &cfg]), EXIT_FAILURE);
}

#[test]
fn vocabulary_mismatch_fails_attack_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    assert_eq!(seqadv(&["corpus", "--config", &cfg]), EXIT_OK);
    let run_cfg = RunConfig::load(&cfg).unwrap();
    let wrong = VictimConfig::from_name("LSTM", 9).unwrap().with_hidden(2, 2);
    Victim::zeros(wrong)
        .save(Layout::new(&run_cfg.out_dir).victim_dir("LSTM"))
        .unwrap();
    assert_eq!(seqadv(&["train-attack", "--config", &cfg, "--victim", "LSTM"]), EXIT_FAILURE);
}

#[test]
fn zero_victim_scores_chance_auc() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "victims = LSTM-Average\n");
    assert_eq!(seqadv(&["corpus", "--config", &cfg]), EXIT_OK);
    let run_cfg = RunConfig::load(&cfg).unwrap();
    let config = run_cfg.victim_config("LSTM-Average").unwrap();
    Victim::zeros(config)
        .save(Layout::new(&run_cfg.out_dir).victim_dir("LSTM-Average"))
        .unwrap();
    assert_eq!(seqadv(&["evaluate", "--config", &cfg]), EXIT_OK);
    let rows = read_table1(Layout::new(&run_cfg.out_dir).reports_dir().join("table1.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].train_auc, 0.5);
    assert_eq!(rows[0].test_auc, 0.5);
}

#[test]
fn small_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert_eq!(seqadv(&["corpus", "--config", &cfg, "--out", out_s]), EXIT_OK);
    for v in ["LSTM", "BiLSTM-Attention"] {
        assert_eq!(seqadv(&["train-victim", "--config", &cfg, "--out", out_s, "--victim", v]), EXIT_OK);
        assert_eq!(
            seqadv(&["train-attack", "--config", &cfg, "--out", out_s, "--victim", v, "--lr", "0.01", "--temp", "2"]),
            EXIT_OK
        );
    }
    assert_eq!(seqadv(&["evaluate", "--config", &cfg, "--out", out_s]), EXIT_OK);

    let reports = Layout::new(&out).reports_dir();
    assert_eq!(read_table1(reports.join("table1.csv")).unwrap().len(), 2);
    let attacks = read_table2(reports.join("table2.csv")).unwrap();
    assert_eq!(attacks.len(), 2);
    for r in &attacks {
        for rate in [r.original_train, r.adversarial_train, r.original_test, r.adversarial_test] {
            assert!((0.0..=1.0).contains(&rate));
        }
        assert!(r.mean_length_inflation >= 1.0);
    }
    assert!(reports.join("transfer.csv").exists());
    assert!(reports.join("adversarial_LSTM.jsonl").exists());

    // Each run directory records the settings that produced it.
    let attack_conf = RunConfig::load(Layout::new(&out).attack_dir("LSTM").join("run.conf")).unwrap();
    assert_eq!(attack_conf.temp, 2.0);
    assert_eq!(attack_conf.gen_lr, 0.01);
}
