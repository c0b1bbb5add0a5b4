//! Shared fixtures for the CLI integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use svdtrain_cli::cli::run;

pub struct Outcome {
    pub code: u8,
    pub stdout: String,
    pub stderr: String,
}

pub fn svdtrain(args: &[&str]) -> Outcome {
    let argv: Vec<String> = std::iter::once("svdtrain").chain(args.iter().copied()).map(String::from).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(&argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

/// A seconds-long experiment: 3 blob classes of 4×4 images and short stages.
pub const SMALL_CONFIG: &str = r#"
seed = 3
model = "cnn-s"
lambda_s = 0.3
energy = 0.05
batch_size = 16

[data]
kind = "blobs"
classes = 3
per_class = 30
shape = [1, 4, 4]
separation = 6.0
seed = 1
held_out = 20

[pretrain]
epochs = 2

[train]
epochs = 3

[finetune]
epochs = 1

[sweep]
lambda_s = [0.1, 0.3]
energy = [0.01, 0.1]
"#;

/// Writes `SMALL_CONFIG` into `dir` with `out` pointing at `dir/<out>`.
pub fn small_config(dir: &Path, out: &str) -> PathBuf {
    let path = dir.join(format!("{out}.toml"));
    let out = toml::Value::String(dir.join(out).to_string_lossy().into_owned());
    fs::write(&path, format!("out = {out}\n{SMALL_CONFIG}")).unwrap();
    path
}

pub fn sha256(path: &Path) -> String {
    let digest = Sha256::digest(fs::read(path).unwrap());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
