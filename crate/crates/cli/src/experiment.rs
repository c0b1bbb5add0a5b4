//! Experiment protocol shared by the subcommands: data and model loading,
//! stage runners, the full pipeline and λ_s × e sweeps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use svdtrain::compression::{prune_model, PruneReport};
use svdtrain::data::{dataset_from_idx, load_delimited, normalize, synthetic_blobs, BlobSpec, Dataset, IdxImages, IdxLabels};
use svdtrain::train::{reinitialize_like, run_pipeline, train_stage, EpochRecord, PipelineSummary, StageConfig};
use svdtrain::Model;

use crate::checkpoint::load_checkpoint;
use crate::config::{is_reference_model, DataSpec, ExperimentConfig};
use crate::metrics::TradeoffRow;
use crate::CliError;

/// Offset between a run's seed and the seed of its from-scratch control.
pub const SCRATCH_SEED_OFFSET: u64 = 1000;

#[derive(Clone, Debug)]
pub struct Data {
    pub train: Dataset,
    /// `None` evaluates on the training set.
    pub val: Option<Dataset>,
}

impl Data {
    pub fn eval_set(&self) -> &Dataset {
        self.val.as_ref().unwrap_or(&self.train)
    }

    pub fn accuracy(&self, model: &Model) -> Result<f64, CliError> {
        let d = self.eval_set();
        Ok(model.accuracy(&d.inputs, &d.labels)?)
    }
}

fn read(path: &std::path::Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn idx(images: &std::path::Path, labels: &std::path::Path, classes: usize) -> Result<Dataset, CliError> {
    let images = IdxImages::parse(&read(images)?)?;
    let labels = IdxLabels::parse(&read(labels)?)?;
    Ok(dataset_from_idx(&images, &labels, classes)?)
}

fn hold_out(train: Dataset, held_out: usize, seed: u64) -> Result<Data, CliError> {
    if held_out == 0 {
        return Ok(Data { train, val: None });
    }
    let (train, val) = train.split(held_out, seed)?;
    Ok(Data { train, val: Some(val) })
}

pub fn load_data(config: &ExperimentConfig) -> Result<Data, CliError> {
    let mut data = match &config.data {
        DataSpec::Blobs {
            classes,
            per_class,
            shape,
            separation,
            seed,
            held_out,
        } => {
            let ds = synthetic_blobs(&BlobSpec {
                class_count: *classes,
                per_class: *per_class,
                shape: shape.clone(),
                separation: *separation,
                seed: *seed,
            })?;
            hold_out(ds, *held_out, *seed)?
        }
        DataSpec::Idx {
            images,
            labels,
            classes,
            val_images,
            val_labels,
            limit,
            held_out,
        } => {
            let mut train = idx(images, labels, *classes)?;
            if let Some(n) = limit.filter(|&n| n < train.len()) {
                train = train.subset(&(0..n).collect::<Vec<_>>());
            }
            match (val_images, val_labels) {
                (Some(vi), Some(vl)) => Data {
                    train,
                    val: Some(idx(vi, vl, *classes)?),
                },
                (None, None) => hold_out(train, *held_out, config.seed)?,
                _ => return Err(CliError::Config(crate::ConfigError::Invalid(
                    "val_images and val_labels must be given together".into(),
                ))),
            }
        }
        DataSpec::Csv {
            path,
            classes,
            val_path,
            held_out,
        } => {
            let train = load_delimited(path, *classes)?;
            match val_path {
                Some(v) => {
                    let val = load_delimited(v, Some(train.class_count))?;
                    Data { train, val: Some(val) }
                }
                None => hold_out(train, *held_out, config.seed)?,
            }
        }
    };
    if let Some(n) = &config.normalize {
        data.train = normalize(&data.train, &n.mean, &n.std)?;
        if let Some(v) = &data.val {
            data.val = Some(normalize(v, &n.mean, &n.std)?);
        }
    }
    Ok(data)
}

/// The configured model: a seeded reference architecture sized for `data`, or
/// a checkpoint.
pub fn initial_model(config: &ExperimentConfig, data: &Data) -> Result<Model, CliError> {
    if is_reference_model(&config.model) {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Model::reference(
            &config.model,
            data.train.sample_shape(),
            data.train.class_count,
            &mut rng,
        )?)
    } else {
        Ok(load_checkpoint(std::path::Path::new(&config.model))?)
    }
}

fn decomposed(config: &ExperimentConfig, model: &Model) -> Result<Model, CliError> {
    Ok(if model.is_decomposed() {
        model.clone()
    } else {
        model.decompose(config.scheme.into())?
    })
}

/// Appends `new`, numbering epochs consecutively across stages.
pub fn append_records(all: &mut Vec<EpochRecord>, new: Vec<EpochRecord>) {
    let start = all.last().map_or(0, |r| r.epoch + 1);
    all.extend(new.into_iter().enumerate().map(|(i, r)| EpochRecord { epoch: start + i, ..r }));
}

fn train_with(model: &mut Model, data: &Data, stage: &StageConfig) -> Result<Vec<EpochRecord>, CliError> {
    Ok(train_stage(model, &data.train, data.val.as_ref(), stage, &mut |_, _| {})?)
}

/// Stage 1 from `model` (decomposed first if dense).
pub fn run_train(config: &ExperimentConfig, data: &Data, model: &Model) -> Result<(Model, Vec<EpochRecord>), CliError> {
    let mut m = decomposed(config, model)?;
    let records = train_with(&mut m, data, &config.train_stage())?;
    Ok((m, records))
}

pub fn run_prune(model: &Model, energy: f64) -> Result<(Model, PruneReport), CliError> {
    if !model.is_decomposed() {
        return Err(CliError::NotDecomposed);
    }
    Ok(prune_model(model, energy)?)
}

pub fn run_finetune(config: &ExperimentConfig, data: &Data, model: &Model) -> Result<(Model, Vec<EpochRecord>), CliError> {
    if !model.is_decomposed() {
        return Err(CliError::NotDecomposed);
    }
    let mut m = model.clone();
    let records = train_with(&mut m, data, &config.finetune_stage())?;
    Ok((m, records))
}

/// Decomposed model trained without the sparsity term under the pretrain
/// settings.
pub fn run_baseline(config: &ExperimentConfig, data: &Data, model: &Model) -> Result<(Model, Vec<EpochRecord>), CliError> {
    let mut m = decomposed(config, model)?;
    let records = train_with(&mut m, data, &config.pretrain_stage())?;
    Ok((m, records))
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    /// Stage-1 initialization; trained when `pretrain.epochs > 0`.
    pub baseline: Model,
    pub baseline_accuracy: f64,
    pub trained: Model,
    pub model: Model,
    pub prune_report: PruneReport,
    pub records: Vec<EpochRecord>,
    pub summary: PipelineSummary,
}

/// Optional baseline training, then stage 1, pruning and finetuning.
pub fn run_full_pipeline(config: &ExperimentConfig, data: &Data, model: &Model) -> Result<PipelineRun, CliError> {
    let (baseline, records) = run_baseline(config, data, model)?;
    run_pipeline_from(config, data, baseline, records)
}

/// Stage 1, pruning and finetuning from an already trained `baseline` whose
/// training records are `records`.
pub fn run_pipeline_from(
    config: &ExperimentConfig,
    data: &Data,
    baseline: Model,
    mut records: Vec<EpochRecord>,
) -> Result<PipelineRun, CliError> {
    let baseline_accuracy = data.accuracy(&baseline)?;
    let out = run_pipeline(&baseline, &data.train, data.val.as_ref(), &config.pipeline(), &mut |_, _| {})?;
    append_records(&mut records, out.records);
    Ok(PipelineRun {
        baseline,
        baseline_accuracy,
        trained: out.trained,
        model: out.model,
        prune_report: out.prune_report,
        records,
        summary: out.summary,
    })
}

/// Same final architecture as `pruned`, freshly initialized and trained under
/// the finetune recipe.
pub fn run_from_scratch(config: &ExperimentConfig, data: &Data, pruned: &Model) -> Result<(Model, f64), CliError> {
    let mut m = reinitialize_like(pruned, config.seed.wrapping_add(SCRATCH_SEED_OFFSET))?;
    train_with(&mut m, data, &config.finetune_stage())?;
    let acc = data.accuracy(&m)?;
    Ok((m, acc))
}

/// One pipeline per `(λ_s, e)` grid point, all starting from one shared
/// baseline. Rows follow the grid in λ_s-major order.
pub fn run_sweep(config: &ExperimentConfig, data: &Data, model: &Model) -> Result<(Model, Vec<TradeoffRow>), CliError> {
    let (baseline, _) = run_baseline(config, data, model)?;
    let mut rows = Vec::new();
    for &lambda_s in &config.sweep.lambda_s {
        for &energy in &config.sweep.energy {
            let point = ExperimentConfig {
                lambda_s,
                energy,
                ..config.clone()
            };
            point.validate()?;
            let run = run_pipeline_from(&point, data, baseline.clone(), Vec::new())?;
            rows.push(TradeoffRow {
                decay: lambda_s,
                energy_pruned: energy,
                accuracy: run.summary.accuracy_final,
                accuracy_gain: run.summary.accuracy_final - run.baseline_accuracy,
                speedup: run.prune_report.speedup,
                speedup_vs_dense: run.prune_report.speedup_vs_dense,
            });
        }
    }
    Ok((baseline, rows))
}

/// `key=value` lines describing a pipeline run.
pub fn summary_text(run: &PipelineRun) -> String {
    let s = &run.summary;
    format!(
        "lambda_s={}\nenergy_threshold={}\nbaseline_accuracy={}\naccuracy_trained={}\naccuracy_pruned={}\naccuracy_final={}\nspeedup={}\nspeedup_vs_dense={}\n",
        s.lambda_s,
        s.energy_threshold,
        run.baseline_accuracy,
        s.accuracy_trained,
        s.accuracy_pruned,
        s.accuracy_final,
        s.speedup,
        s.speedup_vs_dense
    )
}
