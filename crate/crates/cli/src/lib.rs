//! Command-line front end for svdtrain: experiment configuration, checkpoints,
//! metrics logs and the shared experiment protocol.

use std::path::PathBuf;

use thiserror::Error;

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod experiment;
pub mod metrics;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("referenced file does not exist: {0}")]
    Missing(PathBuf),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format version {found} is not supported (this build reads version {supported})")]
    Version { found: i64, supported: u32 },
    #[error("corrupt checkpoint manifest: {0}")]
    Manifest(String),
    #[error("checkpoint blob length mismatch: expected {expected} bytes, found {found}")]
    BlobLength { expected: u64, found: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed metrics: {0}")]
    Parse(String),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Core(#[from] svdtrain::Error),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("this command needs a decomposed (SVD-form) model")]
    NotDecomposed,
    #[error("this command needs --checkpoint or a checkpoint `model` in the config")]
    NoCheckpoint,
}
