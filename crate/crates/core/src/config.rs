//! Run configuration, loadable from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::MAP_NAMES;
use crate::model::ModelConfig;
use crate::optim::{AdamConfig, LrSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// The published widths and depths.
    Full,
    /// A narrow, shallow variant for CPU experiments.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: Preset,
    /// Input side; the preset's own size when unset.
    pub image_size: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<usize>,
    pub lr: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub adaptive_fusion: bool,
    pub interactive_attention: bool,
    pub siamese: bool,
    /// Train the depth-quality classifier; needs labels.
    pub classification_loss: bool,
    /// Weights of the seven saliency terms.
    pub loss_weights: [f64; 7],
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let lr = LrSchedule::default();
        Self {
            preset: Preset::Full,
            image_size: None,
            batch_size: 16,
            epochs: 200,
            max_steps: None,
            lr: lr.initial,
            decay_epochs: lr.decay_epochs,
            decay_factor: lr.factor,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            seed: 0,
            adaptive_fusion: true,
            interactive_attention: true,
            siamese: true,
            classification_loss: true,
            loss_weights: [1.0; 7],
            checkpoint_every: 10,
        }
    }
}

impl RunConfig {
    /// Small-scale defaults.
    pub fn desk() -> Self {
        Self {
            preset: Preset::Desk,
            batch_size: 2,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Usage(format!("config: {e}")))
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            initial: self.lr,
            decay_epochs: self.decay_epochs.clone(),
            factor: self.decay_factor,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut cfg = match self.preset {
            Preset::Full => ModelConfig::full(),
            Preset::Desk => ModelConfig::desk(),
        };
        if let Some(size) = self.image_size {
            cfg = cfg.with_image_size(size);
        }
        cfg.decoder.adaptive_fusion = self.adaptive_fusion;
        if !self.interactive_attention {
            cfg.cmf.interactive_layers = 0;
        }
        cfg.encoder.siamese = self.siamese;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(Error::Usage(m));
        if self.batch_size < 2 {
            return usage(format!("batch_size {} is below 2; batch statistics need two samples", self.batch_size));
        }
        if self.epochs == 0 || self.max_steps == Some(0) {
            return usage("nothing to train: zero epochs or steps".into());
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.lr) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !positive(self.eps) {
            return usage("optimizer settings out of range".into());
        }
        if let Some((i, _)) = self.loss_weights.iter().enumerate().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return usage(format!("loss weight for {} must be finite and non-negative", MAP_NAMES[i]));
        }
        self.model_config().map(|_| ())
    }
}
