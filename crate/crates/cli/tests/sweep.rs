mod common;

use std::fs;

use common::{small_config, svdtrain};
use svdtrain_cli::cli::TRADEOFF_FILE;
use svdtrain_cli::config::ExperimentConfig;
use svdtrain_cli::experiment::{initial_model, load_data, run_baseline, run_prune, run_sweep, run_train};
use svdtrain_cli::metrics::parse_tradeoff;

#[test]
fn two_by_two_sweep_writes_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "sweep");
    let r = svdtrain(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows = parse_tradeoff(&fs::read_to_string(dir.path().join("sweep").join(TRADEOFF_FILE)).unwrap()).unwrap();
    let grid: Vec<(f64, f64)> = rows.iter().map(|r| (r.decay, r.energy_pruned)).collect();
    assert_eq!(grid, vec![(0.1, 0.01), (0.1, 0.1), (0.3, 0.01), (0.3, 0.1)]);
}

/// Each row's speedup is the prune report of an independent stage-1 run at
/// that grid point.
#[test]
fn speedup_column_matches_prune_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::load(&small_config(dir.path(), "sweep")).unwrap();
    let data = load_data(&config).unwrap();
    let initial = initial_model(&config, &data).unwrap();
    let (baseline, rows) = run_sweep(&config, &data, &initial).unwrap();
    assert_eq!(baseline, run_baseline(&config, &data, &initial).unwrap().0);
    for row in rows {
        let point = ExperimentConfig {
            lambda_s: row.decay,
            energy: row.energy_pruned,
            ..config.clone()
        };
        let (trained, _) = run_train(&point, &data, &baseline).unwrap();
        let (_, report) = run_prune(&trained, point.energy).unwrap();
        assert_eq!(row.speedup, report.speedup);
        assert_eq!(row.speedup_vs_dense, report.speedup_vs_dense);
    }
}
