use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{ExtractorSpec, PredictorConfig, StylizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub style_image: PathBuf,
    pub content_dir: PathBuf,
    /// Side of the square training crops; divisible by 4.
    pub image_size: usize,
    pub batch_size: usize,
    pub iterations: u64,
    pub adam: AdamConfig,
    pub init_stddev: f64,
    pub ema_decay: f64,
    pub seed: u64,
    pub extractor: ExtractorSpec,
    pub stylizer: StylizerConfig,
    pub predictor: PredictorConfig,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            style_image: PathBuf::new(),
            content_dir: PathBuf::new(),
            image_size: 48,
            batch_size: 8,
            iterations: 200_000,
            adam: AdamConfig::default(),
            init_stddev: 0.01,
            ema_decay: 0.99,
            seed: 0,
            extractor: ExtractorSpec::toy(),
            stylizer: StylizerConfig::full(),
            predictor: PredictorConfig::full(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "image size {} is not a positive multiple of 4",
                self.image_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.init_stddev > 0.0 && self.init_stddev.is_finite()) {
            return Err(Error::Config(format!(
                "init stddev {} must be positive",
                self.init_stddev
            )));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::Config(format!(
                "EMA decay {} must lie in (0, 1)",
                self.ema_decay
            )));
        }
        if self.stylizer.channels.contains(&0) || self.predictor.width == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        self.adam.validate()
    }
}
