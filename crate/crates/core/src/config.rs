//! Model, optimiser and training configuration with a plain `key = value` text format.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown or repeated keys are
//! rejected; keys that are absent keep their defaults.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Architecture and loss weighting.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    pub base_channels: usize,
    pub stage1_channels: usize,
    pub stage2_channels: usize,
    pub n_fcm_stage1: usize,
    pub n_fcm_stage2: usize,
    pub dropout_rate: f64,
    pub loss_lambda: f64,
    pub loss_alpha: f64,
    /// Multiplier on every channel width.
    pub scale_factor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 128,
            base_channels: 16,
            stage1_channels: 64,
            stage2_channels: 128,
            n_fcm_stage1: 4,
            n_fcm_stage2: 8,
            dropout_rate: 0.5,
            loss_lambda: 0.1,
            loss_alpha: 0.5,
            scale_factor: 1.0,
        }
    }
}

/// Channel widths after applying the scale factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Widths {
    /// Multiscale branches and the last decoder stage.
    pub base: usize,
    /// First down layer.
    pub down1: usize,
    pub stage1: usize,
    /// Down3, bottleneck, first decoder stage.
    pub stage2: usize,
    /// Discriminator layers 1–3.
    pub disc: [usize; 3],
}

impl Widths {
    pub fn all(&self) -> [usize; 7] {
        [self.base, self.down1, self.stage1, self.stage2, self.disc[0], self.disc[1], self.disc[2]]
    }
}

impl ModelConfig {
    fn scaled(&self, w: usize) -> usize {
        (w as f64 * self.scale_factor).round() as usize
    }

    pub fn widths(&self) -> Widths {
        let stage1 = self.scaled(self.stage1_channels);
        let stage2 = self.scaled(self.stage2_channels);
        Widths {
            base: self.scaled(self.base_channels),
            down1: stage1.div_ceil(2),
            stage1,
            stage2,
            disc: [stage1, stage2, 2 * stage2],
        }
    }

    /// Loss weights `(λ, α)`.
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.loss_lambda,
            alpha: self.loss_alpha,
        }
    }

    /// Check the invariants needed to build and run a network.
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 8 != 0 {
            return Err(Error::config(format!(
                "input_size {} must be a positive multiple of 8",
                self.input_size
            )));
        }
        if !(self.scale_factor.is_finite() && self.scale_factor > 0.0) {
            return Err(Error::config(format!(
                "scale_factor {} must be positive",
                self.scale_factor
            )));
        }
        if self.widths().all().contains(&0) {
            return Err(Error::config(format!(
                "scale_factor {} rounds a channel width to zero",
                self.scale_factor
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate {} is outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.loss_lambda >= 0.0 && self.loss_alpha >= 0.0) {
            return Err(Error::config("loss weights must be nonnegative"));
        }
        Ok(())
    }
}

/// Weights of the L1 (`lambda`) and soft Jaccard (`alpha`) generator terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.1,
            alpha: 0.5,
        }
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr {} must be positive", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} {b} is outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps must be positive"));
        }
        Ok(())
    }
}

/// Everything a training run needs besides data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many steps; 0 means no limit.
    pub max_steps: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Expand the training set eightfold with flips, gamma and CLAHE.
    pub augment: bool,
    /// Stop after this many checkpoints without validation improvement; 0 disables.
    pub early_stop_patience: usize,
    /// After this step the learning rate falls linearly, reaching zero just past
    /// `max_steps`; 0 keeps it constant.
    pub lr_decay_from: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 8,
            epochs: 100,
            max_steps: 0,
            seed: 0,
            checkpoint_every: 500,
            augment: true,
            early_stop_patience: 0,
            lr_decay_from: 0,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every must be at least 1"));
        }
        if self.lr_decay_from > 0 && self.max_steps <= self.lr_decay_from {
            return Err(Error::config(format!(
                "lr_decay_from {} needs max_steps beyond it, got {}",
                self.lr_decay_from, self.max_steps
            )));
        }
        Ok(())
    }

    /// Learning rate used for the update at `step` (counted from 1).
    pub fn lr_at(&self, step: u64) -> f64 {
        let lr = self.optimizer.lr;
        if self.lr_decay_from == 0 || step <= self.lr_decay_from {
            return lr;
        }
        let span = (self.max_steps - self.lr_decay_from + 1) as f64;
        lr * (1.0 - (step - self.lr_decay_from) as f64 / span).max(0.0)
    }

    /// Parse `key = value` text. The result is not validated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {}: expected `key = value`, got {line:?}",
                    lineno + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let o = &mut self.optimizer;
        match key {
            "input_size" => m.input_size = parse_value(key, value)?,
            "base_channels" => m.base_channels = parse_value(key, value)?,
            "stage1_channels" => m.stage1_channels = parse_value(key, value)?,
            "stage2_channels" => m.stage2_channels = parse_value(key, value)?,
            "n_fcm_stage1" => m.n_fcm_stage1 = parse_value(key, value)?,
            "n_fcm_stage2" => m.n_fcm_stage2 = parse_value(key, value)?,
            "dropout_rate" => m.dropout_rate = parse_value(key, value)?,
            "loss_lambda" => m.loss_lambda = parse_value(key, value)?,
            "loss_alpha" => m.loss_alpha = parse_value(key, value)?,
            "scale_factor" => m.scale_factor = parse_value(key, value)?,
            "lr" => o.lr = parse_value(key, value)?,
            "beta1" => o.beta1 = parse_value(key, value)?,
            "beta2" => o.beta2 = parse_value(key, value)?,
            "eps" => o.eps = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "max_steps" => self.max_steps = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "augment" => self.augment = parse_value(key, value)?,
            "early_stop_patience" => self.early_stop_patience = parse_value(key, value)?,
            "lr_decay_from" => self.lr_decay_from = parse_value(key, value)?,
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Emit every field; `parse(to_text())` reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let o = &self.optimizer;
        let mut s = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("input_size", &m.input_size);
        put("base_channels", &m.base_channels);
        put("stage1_channels", &m.stage1_channels);
        put("stage2_channels", &m.stage2_channels);
        put("n_fcm_stage1", &m.n_fcm_stage1);
        put("n_fcm_stage2", &m.n_fcm_stage2);
        put("dropout_rate", &m.dropout_rate);
        put("loss_lambda", &m.loss_lambda);
        put("loss_alpha", &m.loss_alpha);
        put("scale_factor", &m.scale_factor);
        put("lr", &o.lr);
        put("beta1", &o.beta1);
        put("beta2", &o.beta2);
        put("eps", &o.eps);
        put("batch_size", &self.batch_size);
        put("epochs", &self.epochs);
        put("max_steps", &self.max_steps);
        put("seed", &self.seed);
        put("checkpoint_every", &self.checkpoint_every);
        put("augment", &self.augment);
        put("early_stop_patience", &self.early_stop_patience);
        put("lr_decay_from", &self.lr_decay_from);
        s
    }
}
