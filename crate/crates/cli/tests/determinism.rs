mod common;

use common::{sha256, small_config, svdtrain};
use svdtrain_cli::cli::{CHECKPOINT_DIR, METRICS_FILE, SUMMARY_FILE};
use svdtrain_cli::checkpoint::{BLOB_FILE, MANIFEST_FILE};

fn pipeline_hashes(seed: &str) -> Vec<String> {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "run");
    let r = svdtrain(&["pipeline", "--config", cfg.to_str().unwrap(), "--seed", seed]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let out = dir.path().join("run");
    [
        out.join(METRICS_FILE),
        out.join(SUMMARY_FILE),
        out.join(CHECKPOINT_DIR).join(MANIFEST_FILE),
        out.join(CHECKPOINT_DIR).join(BLOB_FILE),
    ]
    .iter()
    .map(|p| sha256(p))
    .collect()
}

#[test]
fn repeated_runs_are_hash_identical() {
    let first = pipeline_hashes("5");
    assert_eq!(first, pipeline_hashes("5"));
    assert_ne!(first[0], pipeline_hashes("6")[0]);
}
