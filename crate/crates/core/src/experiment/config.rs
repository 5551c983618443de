use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{GeneratorSpec, NoiseKind, NoiseSpec};
use crate::fusion::FusionStrategy;
use crate::model::ModelOptions;
use crate::netcore::AdamConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over all epochs.
    Cosine,
}

/// Training-time corruption of minibatches.
///
/// On by default: confidence predictors that never see a corrupted input
/// stay confident on one, and the fusion then follows the noisy modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Chance that a minibatch is corrupted.
    pub probability: f64,
    pub kind: NoiseKind,
    /// Degrees are drawn uniformly from `[0, max_degree]`.
    pub max_degree: f64,
    pub modality_fraction: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            probability: 0.5,
            kind: NoiseKind::Gaussian,
            max_degree: 10.0,
            modality_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
    /// Separate rate for the confidence predictors.
    pub predictor_lr: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_schedule: LrSchedule,
    pub augment: AugmentConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            weight_decay: adam.weight_decay,
            epsilon: adam.epsilon,
            predictor_lr: None,
            batch_size: 16,
            epochs: 100,
            lr_schedule: LrSchedule::Cosine,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate().map_err(|e| match e {
            Error::InvalidField { field, reason } => Error::InvalidField {
                field: format!("training.{field}"),
                reason,
            },
            other => other,
        })?;
        if let Some(lr) = self.predictor_lr {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::field(
                    "training.predictor_lr",
                    format!("{lr} is not a finite non-negative rate"),
                ));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::field("training.batch_size", "must be positive"));
        }
        let a = &self.augment;
        if !(0.0..=1.0).contains(&a.probability) {
            return Err(Error::field(
                "training.augment.probability",
                format!("{} not in [0, 1]", a.probability),
            ));
        }
        if !(a.max_degree >= 0.0 && a.max_degree.is_finite()) {
            return Err(Error::field("training.augment.max_degree", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&a.modality_fraction) {
            return Err(Error::field(
                "training.augment.modality_fraction",
                "not in [0, 1]",
            ));
        }
        Ok(())
    }

    /// Multiplier on the base rate for `epoch` (0-based).
    pub fn lr_scale(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let t = epoch as f64 / self.epochs.max(1) as f64;
                0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdpConfig {
    /// Ensemble size per strategy when `seeds` is empty.
    pub models: usize,
    /// Explicit ensemble seeds; overrides `models`.
    pub seeds: Vec<u64>,
    pub strategies: Vec<FusionStrategy>,
}

impl Default for GdpConfig {
    fn default() -> Self {
        Self {
            models: 20,
            seeds: Vec::new(),
            strategies: vec![
                FusionStrategy::MonoOnly,
                FusionStrategy::CoBelief,
                FusionStrategy::Ccb,
            ],
        }
    }
}

impl GdpConfig {
    pub fn ensemble_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (1..=self.models as u64).collect()
        } else {
            self.seeds.clone()
        }
    }
}

/// Everything one experiment needs; read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    pub model: ModelOptions,
    pub training: TrainingConfig,
    /// Test-time noise levels evaluated by every command.
    pub noise: Vec<NoiseSpec>,
    /// Run seeds (initialization, shuffling, dropout, test corruption).
    pub seeds: Vec<u64>,
    pub gdp: GdpConfig,
    /// Default output directory; the command line takes precedence.
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorSpec::default(),
            model: ModelOptions::default(),
            training: TrainingConfig::default(),
            noise: [0.0, 5.0, 10.0]
                .into_iter()
                .map(|degree| NoiseSpec {
                    kind: NoiseKind::Gaussian,
                    degree,
                    modality_fraction: 0.5,
                    seed: 0,
                })
                .collect(),
            seeds: vec![1, 2, 3, 4, 5],
            gdp: GdpConfig::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        for (i, n) in self.noise.iter().enumerate() {
            n.validate().map_err(|e| match e {
                Error::InvalidField { field, reason } => Error::InvalidField {
                    field: field.replacen("noise", &format!("noise[{i}]"), 1),
                    reason,
                },
                other => other,
            })?;
        }
        if self.seeds.is_empty() {
            return Err(Error::field("seeds", "at least one seed is required"));
        }
        Ok(())
    }

    /// Replaces the run seeds and the GDP ensemble seeds.
    pub fn override_seeds(&mut self, seeds: &[u64]) -> Result<()> {
        if seeds.is_empty() {
            return Err(Error::field("seed-override", "empty seed list"));
        }
        self.seeds = seeds.to_vec();
        self.gdp.seeds = seeds.to_vec();
        Ok(())
    }

    /// Noise levels to evaluate, with a clean level if none are configured.
    pub fn noise_levels(&self) -> Vec<NoiseSpec> {
        if self.noise.is_empty() {
            vec![NoiseSpec::default()]
        } else {
            self.noise.clone()
        }
    }
}
