//! Line-oriented run metrics and the accuracy/speedup tradeoff table.
//!
//! Metrics file: one record per epoch, space-separated `key=value` fields in
//! this order:
//!
//! ```text
//! epoch=3 stage=train lr=0.01 train_loss=0.41 val_acc=0.93 mean_orth_residual=0.0021 mean_hoyer=2.6 layer_hoyer=2.1,3.4,1.9
//! ```
//!
//! Tradeoff table: CSV with header
//! `decay,energy_pruned,accuracy,accuracy_gain,speedup,speedup_vs_dense`.
//! Floats use the shortest representation that round-trips.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use svdtrain::train::{EpochRecord, StageKind};

use crate::MetricsError;

pub const METRIC_FIELDS: [&str; 8] = [
    "epoch",
    "stage",
    "lr",
    "train_loss",
    "val_acc",
    "mean_orth_residual",
    "mean_hoyer",
    "layer_hoyer",
];

pub const TRADEOFF_HEADER: &str = "decay,energy_pruned,accuracy,accuracy_gain,speedup,speedup_vs_dense";

pub fn format_record(r: &EpochRecord) -> String {
    let layers: Vec<String> = r.layer_hoyer.iter().map(f64::to_string).collect();
    format!(
        "epoch={} stage={} lr={} train_loss={} val_acc={} mean_orth_residual={} mean_hoyer={} layer_hoyer={}",
        r.epoch,
        r.stage,
        r.lr,
        r.train_loss,
        r.val_acc,
        r.mean_orth_residual,
        r.mean_hoyer,
        layers.join(",")
    )
}

pub fn format_records(records: &[EpochRecord]) -> String {
    records.iter().fold(String::new(), |mut out, r| {
        let _ = writeln!(out, "{}", format_record(r));
        out
    })
}

pub fn write_metrics(path: &Path, records: &[EpochRecord]) -> Result<(), MetricsError> {
    fs::write(path, format_records(records)).map_err(|e| MetricsError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn parse_stage(s: &str) -> Option<StageKind> {
    [StageKind::FullRankSvdTraining, StageKind::Prune, StageKind::Finetune]
        .into_iter()
        .find(|k| k.label() == s)
}

pub fn parse_record(line: &str) -> Result<EpochRecord, MetricsError> {
    let bad = |msg: String| MetricsError::Parse(format!("{msg} in `{line}`"));
    let fields: Vec<(&str, &str)> = line
        .split_whitespace()
        .map(|f| f.split_once('=').ok_or_else(|| bad(format!("field `{f}` has no `=`"))))
        .collect::<Result<_, _>>()?;
    let keys: Vec<&str> = fields.iter().map(|(k, _)| *k).collect();
    if keys != METRIC_FIELDS {
        return Err(bad(format!("fields {keys:?}")));
    }
    let num = |i: usize| -> Result<f64, MetricsError> {
        fields[i].1.parse().map_err(|_| bad(format!("`{}` is not a number", fields[i].1)))
    };
    let layer_hoyer = if fields[7].1.is_empty() {
        Vec::new()
    } else {
        fields[7]
            .1
            .split(',')
            .map(|v| v.parse().map_err(|_| bad(format!("`{v}` is not a number"))))
            .collect::<Result<_, _>>()?
    };
    Ok(EpochRecord {
        epoch: fields[0].1.parse().map_err(|_| bad("bad epoch".into()))?,
        stage: parse_stage(fields[1].1).ok_or_else(|| bad(format!("unknown stage `{}`", fields[1].1)))?,
        lr: num(2)?,
        train_loss: num(3)?,
        val_acc: num(4)?,
        mean_orth_residual: num(5)?,
        mean_hoyer: num(6)?,
        layer_hoyer,
    })
}

pub fn parse_records(text: &str) -> Result<Vec<EpochRecord>, MetricsError> {
    text.lines().filter(|l| !l.trim().is_empty()).map(parse_record).collect()
}

/// One `(λ_s, e)` grid point of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct TradeoffRow {
    pub decay: f64,
    pub energy_pruned: f64,
    pub accuracy: f64,
    /// Final accuracy minus the decomposed baseline accuracy.
    pub accuracy_gain: f64,
    pub speedup: f64,
    pub speedup_vs_dense: f64,
}

pub fn format_tradeoff(rows: &[TradeoffRow]) -> String {
    let mut out = format!("{TRADEOFF_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.decay, r.energy_pruned, r.accuracy, r.accuracy_gain, r.speedup, r.speedup_vs_dense
        );
    }
    out
}

pub fn write_tradeoff(path: &Path, rows: &[TradeoffRow]) -> Result<(), MetricsError> {
    fs::write(path, format_tradeoff(rows)).map_err(|e| MetricsError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn parse_tradeoff(text: &str) -> Result<Vec<TradeoffRow>, MetricsError> {
    let mut lines = text.lines();
    if lines.next() != Some(TRADEOFF_HEADER) {
        return Err(MetricsError::Parse("tradeoff table header mismatch".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let v: Vec<f64> = l
                .split(',')
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| MetricsError::Parse(format!("bad row `{l}`")))?;
            match v[..] {
                [decay, energy_pruned, accuracy, accuracy_gain, speedup, speedup_vs_dense] => Ok(TradeoffRow {
                    decay,
                    energy_pruned,
                    accuracy,
                    accuracy_gain,
                    speedup,
                    speedup_vs_dense,
                }),
                _ => Err(MetricsError::Parse(format!("row `{l}` has {} columns", v.len()))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize) -> EpochRecord {
        EpochRecord {
            epoch,
            stage: StageKind::Finetune,
            lr: 0.001,
            train_loss: 0.25,
            val_acc: 0.875,
            mean_orth_residual: 1.5e-5,
            mean_hoyer: 2.0,
            layer_hoyer: vec![1.5, 2.5],
        }
    }

    #[test]
    fn record_round_trip() {
        let r = record(4);
        assert_eq!(parse_record(&format_record(&r)).unwrap(), r);
        let empty = EpochRecord {
            layer_hoyer: vec![],
            ..record(0)
        };
        assert_eq!(parse_record(&format_record(&empty)).unwrap(), empty);
    }

    #[test]
    fn malformed_records() {
        assert!(parse_record("epoch=1 stage=train").is_err());
        let line = format_record(&record(1)).replace("stage=finetune", "stage=warmup");
        assert!(parse_record(&line).is_err());
    }

    #[test]
    fn tradeoff_round_trip() {
        let rows = vec![
            TradeoffRow {
                decay: 0.1,
                energy_pruned: 0.01,
                accuracy: 0.95,
                accuracy_gain: -0.004,
                speedup: 3.2,
                speedup_vs_dense: 2.55,
            };
            4
        ];
        let text = format_tradeoff(&rows);
        assert_eq!(text.lines().count(), 5);
        assert_eq!(parse_tradeoff(&text).unwrap(), rows);
    }
}
