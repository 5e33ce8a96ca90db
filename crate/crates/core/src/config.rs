//! One JSON configuration document shared by every CLI command, with
//! per-subsystem sections. Missing sections or fields fall back to defaults,
//! and command-line flags override file values.

use std::path::Path;

use crate::alignment::FlowEstimatorSpec;
use crate::error::Error;
use crate::losses::LossConfig;
use crate::models::ModelSpec;
use crate::radiometry::RadiometryConfig;
use crate::supervision::ThresholdConfig;
use crate::training::TrainConfig;
use crate::Result;

/// Scalar training hyperparameters (the nested loss/threshold/radiometry
/// sections live at the top level of the document).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub patch_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr0: f64,
    pub lr_halving_period: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub augment: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            patch_size: t.patch_size,
            batch_size: t.batch_size,
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            lr0: t.lr0,
            lr_halving_period: t.lr_halving_period,
            beta1: t.beta1,
            beta2: t.beta2,
            seed: t.seed,
            augment: t.augment,
        }
    }
}

/// The full pipeline configuration document.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub radiometry: RadiometryConfig,
    pub thresholds: ThresholdConfig,
    pub loss: LossConfig,
    pub flow: FlowEstimatorSpec,
    pub model: ModelSpec,
    pub train: TrainParams,
}

impl PipelineConfig {
    /// Desk-scale defaults: 64 px patches, width-8 model, 30-epoch phases.
    pub fn desk_scale() -> Self {
        let t = TrainConfig::desk_scale();
        Self {
            train: TrainParams {
                patch_size: t.patch_size,
                batch_size: t.batch_size,
                epochs: t.epochs,
                steps_per_epoch: t.steps_per_epoch,
                lr0: t.lr0,
                lr_halving_period: t.lr_halving_period,
                beta1: t.beta1,
                beta2: t.beta2,
                seed: t.seed,
                augment: t.augment,
            },
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Format {
            format: "config",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.flow.validate()?;
        self.model.validate()
    }

    /// Assembles the nested [`TrainConfig`] consumed by the training phases.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            patch_size: self.train.patch_size,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            steps_per_epoch: self.train.steps_per_epoch,
            lr0: self.train.lr0,
            lr_halving_period: self.train.lr_halving_period,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            seed: self.train.seed,
            augment: self.train.augment,
            loss: self.loss.clone(),
            thresholds: self.thresholds,
            radiometry: self.radiometry,
        }
    }
}
