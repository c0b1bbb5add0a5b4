use svdtrain::train::{EpochRecord, StageKind};
use svdtrain_cli::metrics::{format_records, format_tradeoff, parse_records, parse_tradeoff, TradeoffRow};

const METRICS_GOLDEN: &str = include_str!("golden/metrics.log");
const TRADEOFF_GOLDEN: &str = include_str!("golden/tradeoff.csv");

fn records() -> Vec<EpochRecord> {
    vec![
        EpochRecord {
            epoch: 0,
            stage: StageKind::FullRankSvdTraining,
            lr: 0.01,
            train_loss: 1.25,
            val_acc: 0.5,
            mean_orth_residual: 0.0003,
            mean_hoyer: 2.5,
            layer_hoyer: vec![2.0, 3.0],
        },
        EpochRecord {
            epoch: 1,
            stage: StageKind::Finetune,
            lr: 0.001,
            train_loss: 0.1,
            val_acc: 0.96875,
            mean_orth_residual: 1e-7,
            mean_hoyer: 1.5,
            layer_hoyer: vec![1.25, 1.75],
        },
    ]
}

fn rows() -> Vec<TradeoffRow> {
    vec![
        TradeoffRow {
            decay: 0.1,
            energy_pruned: 0.001,
            accuracy: 0.962,
            accuracy_gain: -0.004,
            speedup: 3.5,
            speedup_vs_dense: 2.25,
        },
        TradeoffRow {
            decay: 0.3,
            energy_pruned: 0.01,
            accuracy: 0.95,
            accuracy_gain: 0.0,
            speedup: 4.0,
            speedup_vs_dense: 2.5,
        },
    ]
}

#[test]
fn metrics_match_golden_file() {
    assert_eq!(format_records(&records()), METRICS_GOLDEN);
    assert_eq!(parse_records(METRICS_GOLDEN).unwrap(), records());
}

#[test]
fn tradeoff_matches_golden_file() {
    assert_eq!(format_tradeoff(&rows()), TRADEOFF_GOLDEN);
    assert_eq!(parse_tradeoff(TRADEOFF_GOLDEN).unwrap(), rows());
}

#[test]
fn malformed_tables_are_rejected() {
    assert!(parse_tradeoff("decay,energy\n0.1,0.2\n").is_err());
    let short = TRADEOFF_GOLDEN.replace(",2.25\n", "\n");
    assert!(parse_tradeoff(&short).is_err());
    assert!(parse_records("epoch=0 stage=train").is_err());
}
