//! Experiment configuration: a TOML file whose values command-line flags may
//! override.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use svdtrain::optim::Schedule;
use svdtrain::regularizers::{RegularizerConfig, SparsityKind};
use svdtrain::train::{OptimizerConfig, PipelineConfig, StageConfig};
use svdtrain::DecompositionScheme;

use crate::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Channel,
    Spatial,
}

impl From<SchemeName> for DecompositionScheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::Channel => DecompositionScheme::ChannelWise,
            SchemeName::Spatial => DecompositionScheme::SpatialWise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSpec {
    Blobs {
        classes: usize,
        per_class: usize,
        shape: Vec<usize>,
        separation: f64,
        #[serde(default)]
        seed: u64,
        held_out: usize,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        classes: usize,
        val_images: Option<PathBuf>,
        val_labels: Option<PathBuf>,
        /// Keep only the first `limit` training images.
        limit: Option<usize>,
        #[serde(default)]
        held_out: usize,
    },
    Csv {
        path: PathBuf,
        classes: Option<usize>,
        val_path: Option<PathBuf>,
        #[serde(default)]
        held_out: usize,
    },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Blobs {
            classes: 4,
            per_class: 625,
            shape: vec![1, 8, 8],
            separation: 6.0,
            seed: 0,
            held_out: 500,
        }
    }
}

impl DataSpec {
    fn files(&self) -> Vec<&Path> {
        match self {
            DataSpec::Blobs { .. } => Vec::new(),
            DataSpec::Idx {
                images,
                labels,
                val_images,
                val_labels,
                ..
            } => [Some(images), Some(labels), val_images.as_ref(), val_labels.as_ref()]
                .into_iter()
                .flatten()
                .map(PathBuf::as_path)
                .collect(),
            DataSpec::Csv { path, val_path, .. } => {
                [Some(path), val_path.as_ref()].into_iter().flatten().map(PathBuf::as_path).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: vec![0.0],
            std: vec![1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSettings {
    pub epochs: usize,
    pub lr: f64,
    /// `[epoch, multiplier]` pairs.
    pub milestones: Vec<(usize, f64)>,
}

impl StageSettings {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            initial_lr: self.lr,
            milestones: self.milestones.clone(),
        }
    }
}

impl Default for StageSettings {
    fn default() -> Self {
        StageSettings {
            epochs: 20,
            lr: 0.01,
            milestones: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub lambda_s: Vec<f64>,
    pub energy: Vec<f64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            lambda_s: vec![0.1, 0.3],
            energy: vec![0.001, 0.01],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// `mlp-s`, `cnn-s`, or a checkpoint directory.
    pub model: String,
    pub data: DataSpec,
    pub normalize: Option<Normalization>,
    pub scheme: SchemeName,
    pub regularizer: SparsityKind,
    pub lambda_o: f64,
    pub lambda_s: f64,
    pub energy: f64,
    /// Epochs of decomposed training without the sparsity term used to
    /// initialize stage 1; 0 starts stage 1 from the fresh decomposition.
    pub pretrain: StageSettings,
    pub train: StageSettings,
    pub finetune: StageSettings,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_singular_values: bool,
    pub augment_pad: Option<usize>,
    pub sweep: SweepSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let optimizer = OptimizerConfig::default();
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            model: "cnn-s".into(),
            data: DataSpec::default(),
            normalize: None,
            scheme: SchemeName::Channel,
            regularizer: SparsityKind::Hoyer,
            lambda_o: 1.0,
            lambda_s: 0.3,
            energy: 0.01,
            pretrain: StageSettings::default(),
            train: StageSettings::default(),
            finetune: StageSettings {
                epochs: 10,
                ..StageSettings::default()
            },
            batch_size: 50,
            momentum: optimizer.momentum,
            weight_decay: optimizer.weight_decay,
            decay_singular_values: optimizer.decay_singular_values,
            augment_pad: None,
            sweep: SweepSettings::default(),
        }
    }
}

/// Values supplied on the command line; `None` keeps the config-file value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub scheme: Option<SchemeName>,
    pub regularizer: Option<SparsityKind>,
    pub lambda_s: Option<f64>,
    pub lambda_o: Option<f64>,
    pub energy: Option<f64>,
    pub epochs: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut config = Self::from_toml(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Relative data and model paths are taken relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data {
            DataSpec::Blobs { .. } => {}
            DataSpec::Idx {
                images,
                labels,
                val_images,
                val_labels,
                ..
            } => {
                fix(images);
                fix(labels);
                val_images.iter_mut().for_each(fix);
                val_labels.iter_mut().for_each(fix);
            }
            DataSpec::Csv { path, val_path, .. } => {
                fix(path);
                val_path.iter_mut().for_each(fix);
            }
        }
        if !is_reference_model(&self.model) {
            let mut p = PathBuf::from(&self.model);
            fix(&mut p);
            self.model = p.to_string_lossy().into_owned();
        }
    }

    /// `--epochs` sets the stage-1 epoch count.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.scheme {
            self.scheme = v;
        }
        if let Some(v) = o.regularizer {
            self.regularizer = v;
            if v == SparsityKind::None && o.lambda_s.is_none() {
                self.lambda_s = 0.0;
            }
        }
        if let Some(v) = o.lambda_s {
            self.lambda_s = v;
        }
        if let Some(v) = o.lambda_o {
            self.lambda_o = v;
        }
        if let Some(v) = o.energy {
            self.energy = v;
        }
        if let Some(v) = o.epochs {
            self.train.epochs = v;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if !(self.lambda_o >= 0.0) || !(self.lambda_s >= 0.0) {
            return bad(format!("lambda_o and lambda_s must be non-negative, got {} and {}", self.lambda_o, self.lambda_s));
        }
        if self.regularizer == SparsityKind::None && self.lambda_s != 0.0 {
            return bad("lambda_s is set but no sparsity regularizer is selected".into());
        }
        if !(0.0..=1.0).contains(&self.energy) {
            return bad(format!("energy threshold must lie in [0, 1], got {}", self.energy));
        }
        if self.sweep.energy.iter().any(|e| !(0.0..=1.0).contains(e)) || self.sweep.lambda_s.iter().any(|l| !(*l >= 0.0)) {
            return bad("sweep values out of range".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, s) in [("pretrain", &self.pretrain), ("train", &self.train), ("finetune", &self.finetune)] {
            s.schedule()
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("{name} schedule: {e}")))?;
        }
        let mut files = self.data.files();
        let model = PathBuf::from(&self.model);
        if !is_reference_model(&self.model) {
            files.push(&model);
        }
        if let Some(missing) = files.into_iter().find(|p| !p.exists()) {
            return Err(ConfigError::Missing(missing.to_path_buf()));
        }
        Ok(())
    }

    pub fn regularizer_config(&self) -> RegularizerConfig {
        RegularizerConfig {
            lambda_o: self.lambda_o,
            lambda_s: self.lambda_s,
            kind: self.regularizer,
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            decay_singular_values: self.decay_singular_values,
        }
    }

    fn stage(&self, settings: &StageSettings, regularizer: RegularizerConfig) -> StageConfig {
        let mut stage = StageConfig::training(settings.epochs, settings.schedule(), regularizer, self.seed);
        stage.batch_size = self.batch_size;
        stage.optimizer = self.optimizer();
        stage.augment_pad = self.augment_pad;
        stage
    }

    /// Decomposed training without sparsity (the baseline recipe).
    pub fn pretrain_stage(&self) -> StageConfig {
        self.stage(&self.pretrain, self.regularizer_config().without_sparsity())
    }

    pub fn train_stage(&self) -> StageConfig {
        self.stage(&self.train, self.regularizer_config())
    }

    pub fn finetune_stage(&self) -> StageConfig {
        self.train_stage().finetune_of(self.finetune.epochs, self.finetune.schedule())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig::new(
            self.scheme.into(),
            self.train_stage(),
            self.energy,
            self.finetune.epochs,
            self.finetune.schedule(),
        )
    }
}

pub fn is_reference_model(id: &str) -> bool {
    matches!(id, "mlp-s" | "cnn-s")
}
