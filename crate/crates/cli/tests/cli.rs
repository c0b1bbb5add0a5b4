mod common;

use std::fs;
use std::process::Command;

use common::{small_config, svdtrain};
use svdtrain_cli::checkpoint::load_checkpoint;
use svdtrain_cli::cli::{CHECKPOINT_DIR, EXIT_FAILURE, EXIT_OK, EXIT_USAGE, METRICS_FILE, PRUNE_REPORT_FILE, SUMMARY_FILE};
use svdtrain_cli::config::ExperimentConfig;
use svdtrain_cli::experiment::{initial_model, load_data};
use svdtrain_cli::metrics::parse_records;

#[test]
fn help_and_usage_errors() {
    let help = svdtrain(&["--help"]);
    assert_eq!(help.code, EXIT_OK);
    assert!(help.stdout.contains("pipeline"));
    let bad = svdtrain(&["train", "--reg", "l7"]);
    assert_eq!(bad.code, EXIT_USAGE);
    assert!(bad.stderr.contains("--reg"));
    assert_eq!(svdtrain(&["frobnicate"]).code, EXIT_USAGE);
}

#[test]
fn runtime_errors_exit_with_failure() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let r = svdtrain(&["train", "--config", missing.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_FAILURE);
    assert!(r.stderr.starts_with("error: "));
    let cfg = small_config(dir.path(), "run");
    let r = svdtrain(&["prune", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_FAILURE);
    assert!(r.stderr.contains("--checkpoint"));
    let r = svdtrain(&["train", "--config", cfg.to_str().unwrap(), "--energy", "2"]);
    assert_eq!(r.code, EXIT_FAILURE);
}

#[test]
fn zero_epoch_training_saves_the_decomposed_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "zero");
    let r = svdtrain(&["train", "--config", cfg.to_str().unwrap(), "--epochs", "0"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let out = dir.path().join("zero");
    assert_eq!(fs::read_to_string(out.join(METRICS_FILE)).unwrap(), "");
    let config = ExperimentConfig::load(&cfg).unwrap();
    let data = load_data(&config).unwrap();
    let expected = initial_model(&config, &data).unwrap().decompose(config.scheme.into()).unwrap();
    assert_eq!(load_checkpoint(&out.join(CHECKPOINT_DIR)).unwrap(), expected);
}

#[test]
fn stage_commands_chain_through_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "chain");
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("chain");
    let ckpt = out.join(CHECKPOINT_DIR);

    let r = svdtrain(&["train", "--config", cfg]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let records = parse_records(&fs::read_to_string(out.join(METRICS_FILE)).unwrap()).unwrap();
    assert_eq!(records.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![0, 1, 2]);
    let trained = load_checkpoint(&ckpt).unwrap();

    let pruned_dir = dir.path().join("pruned");
    let r = svdtrain(&["prune", "--config", cfg, "--checkpoint", ckpt.to_str().unwrap(), "--out", pruned_dir.to_str().unwrap(), "--energy", "0.2"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(fs::read_to_string(pruned_dir.join(PRUNE_REPORT_FILE)).unwrap().contains("total energy_threshold=0.2"));
    let pruned = load_checkpoint(&pruned_dir.join(CHECKPOINT_DIR)).unwrap();
    let ranks = |m: &svdtrain::Model| m.svd_layers().map(|l| l.rank()).collect::<Vec<_>>();
    assert!(ranks(&pruned).iter().zip(ranks(&trained)).all(|(a, b)| *a <= b));

    let tuned = dir.path().join("tuned");
    let pruned_ckpt = pruned_dir.join(CHECKPOINT_DIR);
    let r = svdtrain(&["finetune", "--config", cfg, "--checkpoint", pruned_ckpt.to_str().unwrap(), "--out", tuned.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.contains("accuracy="));
    assert_eq!(ranks(&load_checkpoint(&tuned.join(CHECKPOINT_DIR)).unwrap()), ranks(&pruned));

    let r = svdtrain(&["flops", "--config", cfg, "--checkpoint", pruned_ckpt.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let report = svdtrain::compression::flops_report(&pruned).unwrap();
    assert_eq!(r.stdout, report.to_text());

    let r = svdtrain(&["eval", "--config", cfg, "--checkpoint", pruned_ckpt.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.ends_with("samples=20\n"));
}

#[test]
fn pipeline_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "pipe");
    let r = svdtrain(&["pipeline", "--config", cfg.to_str().unwrap(), "--reg", "hoyer", "--lambda-s", "0.01", "--energy", "1e-3"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let out = dir.path().join("pipe");
    let records = parse_records(&fs::read_to_string(out.join(METRICS_FILE)).unwrap()).unwrap();
    // Two baseline epochs, three stage-1 epochs, one finetune epoch.
    assert_eq!(records.len(), 6);
    assert!(records.windows(2).all(|p| p[1].epoch == p[0].epoch + 1));
    let summary = fs::read_to_string(out.join(SUMMARY_FILE)).unwrap();
    assert!(summary.contains("lambda_s=0.01\n") && summary.contains("energy_threshold=0.001\n"));
    assert!(out.join(PRUNE_REPORT_FILE).exists());
    assert!(load_checkpoint(&out.join(CHECKPOINT_DIR)).unwrap().is_decomposed());
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_svdtrain");
    let ok = Command::new(bin).arg("--version").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let usage = Command::new(bin).arg("train").arg("--seed").arg("x").output().unwrap();
    assert_eq!(usage.status.code(), Some(1));
    let failure = Command::new(bin).args(["eval", "--config", "/nonexistent/config.toml"]).output().unwrap();
    assert_eq!(failure.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&failure.stderr).contains("nonexistent"));
}
