//! Stage training loop and the train → prune → finetune pipeline.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compression::{prune_model, PruneReport};
use crate::data::{augment, batches, Dataset};
use crate::error::{Error, Result};
use crate::layers::{DecompositionScheme, DenseLayer, SvdLayer};
use crate::model::{Block, Model, ParamKind, ParamLayer};
use crate::optim::{sgd_step, OptimizerState, Schedule};
use crate::regularizers::{hoyer_value, orthogonality_residual, total_objective, RegularizerConfig};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    FullRankSvdTraining,
    Prune,
    Finetune,
}

impl StageKind {
    pub fn label(self) -> &'static str {
        match self {
            StageKind::FullRankSvdTraining => "train",
            StageKind::Prune => "prune",
            StageKind::Finetune => "finetune",
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Apply weight decay to singular values as well as to every other tensor.
    pub decay_singular_values: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_singular_values: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub stage: StageKind,
    pub epochs: usize,
    pub schedule: Schedule,
    pub regularizer: RegularizerConfig,
    /// Only meaningful for [`StageKind::Prune`].
    pub energy_threshold: Option<f64>,
    pub seed: u64,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Random-crop padding; `None` disables augmentation.
    pub augment_pad: Option<usize>,
}

impl StageConfig {
    pub fn training(epochs: usize, schedule: Schedule, regularizer: RegularizerConfig, seed: u64) -> Self {
        StageConfig {
            stage: StageKind::FullRankSvdTraining,
            epochs,
            schedule,
            regularizer,
            energy_threshold: None,
            seed,
            batch_size: 100,
            optimizer: OptimizerConfig::default(),
            augment_pad: None,
        }
    }

    /// Same recipe with the sparsity term removed.
    pub fn finetune_of(&self, epochs: usize, schedule: Schedule) -> Self {
        StageConfig {
            stage: StageKind::Finetune,
            epochs,
            schedule,
            regularizer: self.regularizer.without_sparsity(),
            energy_threshold: None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.regularizer.validate()?;
        self.schedule.validate()?;
        match self.stage {
            StageKind::Prune => {
                if self.epochs != 0 {
                    return Err(Error::Parameter("the prune stage does not train".into()));
                }
                match self.energy_threshold {
                    Some(e) if (0.0..=1.0).contains(&e) => {}
                    other => return Err(Error::Parameter(format!("prune needs e in [0, 1], got {other:?}"))),
                }
            }
            StageKind::Finetune if self.regularizer.lambda_s != 0.0 => {
                return Err(Error::Parameter("finetuning requires lambda_s = 0".into()));
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Metrics sampled at the end of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: StageKind,
    pub lr: f64,
    /// Sample-weighted mean softmax cross-entropy over the epoch.
    pub train_loss: f64,
    pub val_acc: f64,
    pub mean_orth_residual: f64,
    pub mean_hoyer: f64,
    pub layer_hoyer: Vec<f64>,
}

/// Mean orthogonality residual over SVD layers (0 for a dense model).
pub fn mean_orth_residual(model: &Model) -> f64 {
    mean(model.svd_layers().map(orthogonality_residual))
}

/// Hoyer ratio of each SVD layer's singular values.
pub fn layer_hoyer(model: &Model) -> Vec<f64> {
    model.svd_layers().map(|l| hoyer_value(l.s.data())).collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Names the first place a non-finite value shows up for this batch.
fn locate_non_finite(model: &Model, inputs: &Tensor) -> String {
    for (i, layer) in model.layers().enumerate() {
        if layer.tensors().iter().any(|t| !t.is_finite()) {
            return format!("layer {i} parameters");
        }
    }
    let mut tape = Tape::new();
    let vars = model.register(&mut tape, false);
    let mut x = tape.constant(inputs.clone());
    let mut layer_idx = 0;
    for block in &model.blocks {
        let step = match block {
            Block::Layer(l) => {
                let out = l.forward(&mut tape, &vars.layers[layer_idx], x);
                layer_idx += 1;
                out
            }
            Block::Relu => Ok(tape.relu(x)),
            Block::MaxPool(k) => tape.max_pool2d(x, *k),
            Block::Flatten => {
                let s = tape.shape(x).to_vec();
                tape.reshape(x, &[s[0], s[1..].iter().product()])
            }
        };
        match step {
            Ok(out) => x = out,
            Err(e) => return format!("forward error: {e}"),
        }
        if matches!(block, Block::Layer(_)) && !tape.value(x).is_finite() {
            return format!("layer {} output", layer_idx - 1);
        }
    }
    for (i, layer) in model.layers().enumerate() {
        if let Some(svd) = layer.as_svd() {
            if !orthogonality_residual(svd).is_finite() {
                return format!("layer {i} orthogonality term");
            }
        }
    }
    "task loss".into()
}

fn decay_mask(model: &Model, config: &OptimizerConfig) -> Vec<bool> {
    model
        .param_kinds()
        .into_iter()
        .map(|k| config.decay_singular_values || k != ParamKind::S)
        .collect()
}

/// Trains `model` for `config.epochs` epochs and returns one record per epoch.
///
/// Validation accuracy is measured on `val`, or on `train` when `val` is `None`.
pub fn train_stage(
    model: &mut Model,
    train: &Dataset,
    val: Option<&Dataset>,
    config: &StageConfig,
    hook: &mut dyn FnMut(&EpochRecord, &Model),
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if config.stage == StageKind::Prune {
        return Err(Error::Parameter("train_stage needs a training stage".into()));
    }
    if train.is_empty() {
        return Err(Error::Length("training set is empty".into()));
    }
    let mut state = OptimizerState::new(
        &model.tensors(),
        config.schedule.initial_lr,
        config.optimizer.momentum,
        config.optimizer.weight_decay,
    )?;
    let mask = decay_mask(model, &config.optimizer);
    let eval = val.unwrap_or(train);
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        state.lr = config.schedule.lr_at_epoch(epoch);
        let mut loss_sum = 0.0;
        for (b, batch) in batches(train, config.batch_size, config.seed, epoch).into_iter().enumerate() {
            let inputs = match config.augment_pad {
                Some(pad) => augment(&batch.inputs, pad, config.seed, epoch, b),
                None => batch.inputs,
            };
            let mut tape = Tape::new();
            let vars = model.register(&mut tape, true);
            let x = tape.constant(inputs.clone());
            let logits = model.forward(&mut tape, &vars, x)?;
            let task = tape.softmax_cross_entropy(logits, &batch.labels)?;
            let factors = model.factor_vars(&vars);
            let objective = total_objective(&mut tape, task, &factors, &config.regularizer)?;
            let task_value = tape.value(task).item();
            if !tape.value(objective).item().is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    location: locate_non_finite(model, &inputs),
                });
            }
            loss_sum += task_value * batch.labels.len() as f64;
            let grads = tape.backward(objective)?;
            let grads: Vec<Tensor> = vars.all().into_iter().map(|v| grads.wrt(v)).collect();
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    epoch,
                    location: locate_non_finite(model, &inputs),
                });
            }
            sgd_step(&mut model.tensors_mut(), &grads, &mut state, &mask)?;
        }
        let layer_h = layer_hoyer(model);
        let record = EpochRecord {
            epoch,
            stage: config.stage,
            lr: state.lr,
            train_loss: loss_sum / train.len() as f64,
            val_acc: model.accuracy(&eval.inputs, &eval.labels)?,
            mean_orth_residual: mean_orth_residual(model),
            mean_hoyer: mean(layer_h.iter().copied()),
            layer_hoyer: layer_h,
        };
        hook(&record, model);
        records.push(record);
    }
    Ok(records)
}

/// Stage-1, prune and finetune settings of one pipeline run.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Decomposition applied to convolutions of a dense starting model.
    pub scheme: DecompositionScheme,
    pub stage1: StageConfig,
    pub energy_threshold: f64,
    pub finetune: StageConfig,
}

impl PipelineConfig {
    pub fn new(
        scheme: DecompositionScheme,
        stage1: StageConfig,
        energy_threshold: f64,
        finetune_epochs: usize,
        finetune_schedule: Schedule,
    ) -> Self {
        let finetune = stage1.finetune_of(finetune_epochs, finetune_schedule);
        PipelineConfig {
            scheme,
            stage1,
            energy_threshold,
            finetune,
        }
    }

    pub fn prune_stage(&self) -> StageConfig {
        StageConfig {
            stage: StageKind::Prune,
            epochs: 0,
            energy_threshold: Some(self.energy_threshold),
            ..self.stage1.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage1.stage != StageKind::FullRankSvdTraining || self.finetune.stage != StageKind::Finetune {
            return Err(Error::Parameter("pipeline stages are out of order".into()));
        }
        if self.finetune.regularizer.lambda_o != self.stage1.regularizer.lambda_o {
            return Err(Error::Parameter("finetuning keeps the stage-1 lambda_o".into()));
        }
        self.stage1.validate()?;
        self.prune_stage().validate()?;
        self.finetune.validate()
    }
}

/// Consolidated accuracy-versus-cost record of a pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub lambda_s: f64,
    pub energy_threshold: f64,
    pub accuracy_trained: f64,
    pub accuracy_pruned: f64,
    pub accuracy_final: f64,
    /// Decomposed full-rank FLOPs over final FLOPs.
    pub speedup: f64,
    /// Dense FLOPs over final FLOPs.
    pub speedup_vs_dense: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub trained: Model,
    pub model: Model,
    pub prune_report: PruneReport,
    pub records: Vec<EpochRecord>,
    pub summary: PipelineSummary,
}

fn tagged<T>(stage: StageKind, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: stage.label(),
        source: Box::new(e),
    })
}

/// Full-rank SVD training, singular value pruning at `energy_threshold`, then
/// finetuning without the sparsity term. A dense `initial` model is first
/// decomposed with `config.scheme`.
pub fn run_pipeline(
    initial: &Model,
    train: &Dataset,
    val: Option<&Dataset>,
    config: &PipelineConfig,
    hook: &mut dyn FnMut(&EpochRecord, &Model),
) -> Result<PipelineOutcome> {
    config.validate()?;
    let eval = val.unwrap_or(train);
    let mut model = if initial.is_decomposed() {
        initial.clone()
    } else {
        tagged(StageKind::FullRankSvdTraining, initial.decompose(config.scheme))?
    };

    let mut records = tagged(
        StageKind::FullRankSvdTraining,
        train_stage(&mut model, train, val, &config.stage1, hook),
    )?;
    let trained = model.clone();
    let accuracy_trained = tagged(StageKind::FullRankSvdTraining, trained.accuracy(&eval.inputs, &eval.labels))?;

    let (mut model, prune_report) = tagged(StageKind::Prune, prune_model(&trained, config.energy_threshold))?;
    let accuracy_pruned = tagged(StageKind::Prune, model.accuracy(&eval.inputs, &eval.labels))?;

    records.extend(tagged(
        StageKind::Finetune,
        train_stage(&mut model, train, val, &config.finetune, hook),
    )?);
    let accuracy_final = tagged(StageKind::Finetune, model.accuracy(&eval.inputs, &eval.labels))?;

    let summary = PipelineSummary {
        lambda_s: config.stage1.regularizer.lambda_s,
        energy_threshold: config.energy_threshold,
        accuracy_trained,
        accuracy_pruned,
        accuracy_final,
        speedup: prune_report.speedup,
        speedup_vs_dense: prune_report.speedup_vs_dense,
    };
    Ok(PipelineOutcome {
        trained,
        model,
        prune_report,
        records,
        summary,
    })
}

/// Same architecture and ranks as `template`, freshly initialized: every SVD
/// layer is the rank-truncated SVD of a new fan-in-scaled random dense weight.
pub fn reinitialize_like(template: &Model, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = template.clone();
    for layer in out.layers_mut() {
        *layer = match layer {
            ParamLayer::Dense(d) => ParamLayer::Dense(DenseLayer::init(d.geometry.clone(), &mut rng)),
            ParamLayer::Svd(s) => {
                let fresh = DenseLayer::init(s.geometry.clone(), &mut rng);
                let full = SvdLayer::from_dense_layer(&fresh, s.scheme)?;
                let keep: Vec<usize> = (0..s.rank()).collect();
                ParamLayer::Svd(SvdLayer::new(
                    s.scheme,
                    s.geometry.clone(),
                    full.u.select_columns(&keep),
                    full.s.select(&keep),
                    full.v.select_columns(&keep),
                    full.bias,
                )?)
            }
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_blobs, BlobSpec};
    use crate::regularizers::SparsityKind;

    fn blobs() -> Dataset {
        synthetic_blobs(&BlobSpec {
            class_count: 3,
            per_class: 20,
            shape: vec![1, 4, 4],
            separation: 8.0,
            seed: 11,
        })
        .unwrap()
    }

    fn model() -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        Model::cnn_s(&[1, 4, 4], 3, &mut rng)
            .unwrap()
            .decompose(DecompositionScheme::ChannelWise)
            .unwrap()
    }

    fn stage(epochs: usize, reg: RegularizerConfig) -> StageConfig {
        let mut s = StageConfig::training(epochs, Schedule::constant(0.01), reg, 3);
        s.batch_size = 16;
        s
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut m = model();
        let before = m.clone();
        let records = train_stage(&mut m, &blobs(), None, &stage(0, RegularizerConfig::default()), &mut |_, _| {}).unwrap();
        assert!(records.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn training_is_deterministic_and_reports_each_epoch() {
        let ds = blobs();
        let run = || {
            let mut m = model();
            let mut seen = Vec::new();
            let records = train_stage(&mut m, &ds, None, &stage(3, RegularizerConfig::default()), &mut |r, _| {
                seen.push(r.epoch)
            })
            .unwrap();
            (m, records, seen)
        };
        let (m1, r1, seen) = run();
        let (m2, r2, _) = run();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
        assert_eq!(seen, vec![0, 1, 2]);
        assert_eq!(r1[0].layer_hoyer.len(), 3);
    }

    #[test]
    fn finetune_rejects_sparsity() {
        let reg = RegularizerConfig {
            lambda_o: 1.0,
            lambda_s: 0.1,
            kind: SparsityKind::Hoyer,
        };
        let mut s = stage(1, reg);
        s.stage = StageKind::Finetune;
        assert!(s.validate().is_err());
        assert_eq!(stage(1, reg).finetune_of(1, Schedule::constant(0.01)).regularizer.lambda_s, 0.0);
    }

    #[test]
    fn non_finite_loss_names_location() {
        let mut m = model();
        if let Some(ParamLayer::Svd(l)) = m.layers_mut().nth(1) {
            l.s.data_mut()[0] = f64::NAN;
        }
        let err = train_stage(&mut m, &blobs(), None, &stage(1, RegularizerConfig::default()), &mut |_, _| {}).unwrap_err();
        match err {
            Error::NonFinite { epoch, location } => {
                assert_eq!(epoch, 0);
                assert_eq!(location, "layer 1 parameters");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn no_op_pipeline_keeps_full_rank() {
        let cfg = PipelineConfig::new(
            DecompositionScheme::ChannelWise,
            stage(1, RegularizerConfig::default()),
            0.0,
            1,
            Schedule::constant(0.01),
        );
        let out = run_pipeline(&model(), &blobs(), None, &cfg, &mut |_, _| {}).unwrap();
        for (a, b) in out.trained.svd_layers().zip(out.model.svd_layers()) {
            assert_eq!(a.rank(), b.rank());
        }
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[1].stage, StageKind::Finetune);
    }

    #[test]
    fn reinitialized_model_keeps_ranks() {
        let m = model();
        let (pruned, _) = prune_model(&m, 0.2).unwrap();
        let fresh = reinitialize_like(&pruned, 9).unwrap();
        let ranks = |m: &Model| m.svd_layers().map(SvdLayer::rank).collect::<Vec<_>>();
        assert_eq!(ranks(&fresh), ranks(&pruned));
        assert_ne!(fresh, pruned);
    }
}
