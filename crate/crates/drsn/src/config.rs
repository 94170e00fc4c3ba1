//! Plain `key = value` run configuration with `#` comments.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::NetworkConfig;
use crate::train::TrainConfig;

/// Union of network widths, trainer settings, synthesis size and the
/// evaluation threshold. Every key has a documented default; unknown keys
/// are rejected.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    /// `channels`: extractor block width (default 32).
    pub channels: usize,
    /// `blocks`: number of deformable residual blocks (default 3).
    pub blocks: usize,
    /// `kernel`: odd kernel side length (default 3).
    pub kernel: usize,
    /// `lr`: Adam learning rate (default 0.0002).
    pub lr: f64,
    /// `batch`: samples per optimization step (default 8).
    pub batch: usize,
    /// `epochs`: passes over the dataset (default 50).
    pub epochs: usize,
    /// `seed`: master seed for init, shuffling and augmentation (default 42).
    pub seed: u64,
    /// `augment`: random flips and translations during training (default true).
    pub augment: bool,
    /// `threshold`: binarization threshold for evaluation (default 0.5).
    pub threshold: f64,
    /// `size`: expected square image side (default 80).
    pub size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            channels: 32,
            blocks: 3,
            kernel: 3,
            lr: 2e-4,
            batch: 8,
            epochs: 50,
            seed: 42,
            augment: true,
            threshold: 0.5,
            size: 80,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one key; shared by the file parser and CLI flag overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for key {key:?}")))
        }
        match key {
            "channels" => self.channels = parse(key, value)?,
            "blocks" => self.blocks = parse(key, value)?,
            "kernel" => self.kernel = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "augment" => {
                self.augment = match value {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => {
                        return Err(Error::Config(format!(
                            "bad value {value:?} for key \"augment\""
                        )))
                    }
                }
            }
            "threshold" => self.threshold = parse(key, value)?,
            "size" => self.size = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.blocks == 0 {
            return Err(Error::Config("channels and blocks must be >= 1".into()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel must be odd and >= 1, got {}",
                self.kernel
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Config("batch and epochs must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        if self.size < 16 {
            return Err(Error::Config(format!(
                "size must be >= 16, got {}",
                self.size
            )));
        }
        Ok(())
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            channels: self.channels,
            blocks: self.blocks,
            kernel: self.kernel,
        }
    }

    pub fn trainer(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch,
            epochs: self.epochs,
            seed: self.seed,
            augment: self.augment,
        }
    }
}
