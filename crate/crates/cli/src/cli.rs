//! Argument parsing and subcommand dispatch.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use svdtrain::compression::flops_report;
use svdtrain::regularizers::SparsityKind;
use svdtrain::Model;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{is_reference_model, ExperimentConfig, Overrides, SchemeName};
use crate::experiment::{
    initial_model, load_data, run_finetune, run_full_pipeline, run_prune, run_sweep, run_train, summary_text, Data,
};
use crate::metrics::{write_metrics, write_tradeoff};
use crate::CliError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_FAILURE: u8 = 2;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const METRICS_FILE: &str = "metrics.log";
pub const PRUNE_REPORT_FILE: &str = "prune_report.txt";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const TRADEOFF_FILE: &str = "tradeoff.csv";

#[derive(Debug, Parser)]
#[command(name = "svdtrain", version, about = "Train, prune and finetune neural networks in SVD form")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Full-rank SVD training (stage 1).
    Train(Common),
    /// Singular value pruning of a checkpoint at the energy threshold.
    Prune(Common),
    /// Low-rank finetuning of a checkpoint without the sparsity term.
    Finetune(Common),
    /// Training, pruning and finetuning in one run.
    Pipeline(Common),
    /// Accuracy of a model on the evaluation set.
    Eval(Common),
    /// Per-layer and total FLOPs and the speedup over the dense model.
    Flops(Common),
    /// Pipeline over the λ_s × energy grid, written as a tradeoff table.
    Sweep(Common),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RegName {
    None,
    L1,
    Hoyer,
}

impl From<RegName> for SparsityKind {
    fn from(r: RegName) -> Self {
        match r {
            RegName::None => SparsityKind::None,
            RegName::L1 => SparsityKind::L1,
            RegName::Hoyer => SparsityKind::Hoyer,
        }
    }
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeName>,
    #[arg(long, value_enum)]
    reg: Option<RegName>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    lambda_o: Option<f64>,
    /// Energy threshold e in [0, 1].
    #[arg(long)]
    energy: Option<f64>,
    /// Stage-1 epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Checkpoint directory to start from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        config.apply(&Overrides {
            seed: self.seed,
            out: self.out.clone(),
            scheme: self.scheme,
            regularizer: self.reg.map(Into::into),
            lambda_s: self.lambda_s,
            lambda_o: self.lambda_o,
            energy: self.energy,
            epochs: self.epochs,
        });
        if let Some(ckpt) = &self.checkpoint {
            config.model = ckpt.to_string_lossy().into_owned();
        }
        config.validate()?;
        Ok(config)
    }
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let _ = writeln!(err, "  caused by: {s}");
                source = s.source();
            }
            EXIT_FAILURE
        }
    }
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn checkpoint_model(config: &ExperimentConfig) -> Result<Model, CliError> {
    if is_reference_model(&config.model) {
        return Err(CliError::NoCheckpoint);
    }
    Ok(load_checkpoint(Path::new(&config.model))?)
}

fn save(config: &ExperimentConfig, model: &Model, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = config.out.join(CHECKPOINT_DIR);
    save_checkpoint(model, &dir)?;
    let _ = writeln!(out, "checkpoint: {}", dir.display());
    Ok(())
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Train(c) => {
            let config = c.config()?;
            let data = load_data(&config)?;
            let (model, records) = run_train(&config, &data, &initial_model(&config, &data)?)?;
            prepare_out(&config.out)?;
            write_metrics(&config.out.join(METRICS_FILE), &records)?;
            save(&config, &model, out)?;
            report_accuracy(&data, &model, out)
        }
        Command::Prune(c) => {
            let config = c.config()?;
            let (model, report) = run_prune(&checkpoint_model(&config)?, config.energy)?;
            prepare_out(&config.out)?;
            let text = report.to_text();
            write_text(&config.out.join(PRUNE_REPORT_FILE), &text)?;
            let _ = write!(out, "{text}");
            save(&config, &model, out)
        }
        Command::Finetune(c) => {
            let config = c.config()?;
            let data = load_data(&config)?;
            let (model, records) = run_finetune(&config, &data, &checkpoint_model(&config)?)?;
            prepare_out(&config.out)?;
            write_metrics(&config.out.join(METRICS_FILE), &records)?;
            save(&config, &model, out)?;
            report_accuracy(&data, &model, out)
        }
        Command::Pipeline(c) => {
            let config = c.config()?;
            let data = load_data(&config)?;
            let run = run_full_pipeline(&config, &data, &initial_model(&config, &data)?)?;
            prepare_out(&config.out)?;
            write_metrics(&config.out.join(METRICS_FILE), &run.records)?;
            write_text(&config.out.join(PRUNE_REPORT_FILE), &run.prune_report.to_text())?;
            let summary = summary_text(&run);
            write_text(&config.out.join(SUMMARY_FILE), &summary)?;
            let _ = write!(out, "{summary}");
            save(&config, &run.model, out)
        }
        Command::Eval(c) => {
            let config = c.config()?;
            let data = load_data(&config)?;
            report_accuracy(&data, &initial_model(&config, &data)?, out)
        }
        Command::Flops(c) => {
            let config = c.config()?;
            let model = if is_reference_model(&config.model) {
                initial_model(&config, &load_data(&config)?)?
            } else {
                checkpoint_model(&config)?
            };
            let _ = write!(out, "{}", flops_report(&model)?.to_text());
            Ok(())
        }
        Command::Sweep(c) => {
            let config = c.config()?;
            let data = load_data(&config)?;
            let (baseline, rows) = run_sweep(&config, &data, &initial_model(&config, &data)?)?;
            prepare_out(&config.out)?;
            let path = config.out.join(TRADEOFF_FILE);
            write_tradeoff(&path, &rows)?;
            let _ = write!(out, "{}", crate::metrics::format_tradeoff(&rows));
            save(&config, &baseline, out)
        }
    }
}

fn report_accuracy(data: &Data, model: &Model, out: &mut dyn Write) -> Result<(), CliError> {
    let acc = data.accuracy(model)?;
    let _ = writeln!(out, "accuracy={acc} samples={}", data.eval_set().len());
    Ok(())
}
