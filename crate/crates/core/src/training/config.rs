use crate::error::{Error, Result};
use crate::model::{parse_value, KeyDoc};

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fixed iteration budget; 0 derives it from `epochs`.
    pub iterations: u64,
    /// First iteration trained at `lr · lr_decay_factor`.
    pub lr_decay_at: u64,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub augment_rotate: bool,
    pub augment_flip: bool,
    /// Evaluate every this many iterations; 0 evaluates only at the end.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 12,
            epochs: 150,
            iterations: 0,
            lr_decay_at: 30_000,
            lr_decay_factor: 0.1,
            seed: 0,
            augment_rotate: true,
            augment_flip: true,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [KeyDoc] = &[
        KeyDoc { key: "lr", help: "base learning rate" },
        KeyDoc { key: "momentum", help: "SGD momentum" },
        KeyDoc { key: "weight_decay", help: "L2 penalty added to decayed gradients" },
        KeyDoc { key: "batch_size", help: "cases per iteration" },
        KeyDoc { key: "epochs", help: "passes over the training set when iterations = 0" },
        KeyDoc { key: "iterations", help: "fixed iteration budget, 0 to use epochs" },
        KeyDoc { key: "lr_decay_at", help: "iteration where the step decay starts" },
        KeyDoc { key: "lr_decay_factor", help: "learning-rate multiplier after the decay point" },
        KeyDoc { key: "train_seed", help: "seed for shuffling, augmentation and dropout" },
        KeyDoc { key: "augment_rotate", help: "random 90-degree rotations" },
        KeyDoc { key: "augment_flip", help: "random horizontal or vertical flips" },
        KeyDoc { key: "eval_every", help: "evaluation period in iterations, 0 for end only" },
    ];

    pub fn is_key(key: &str) -> bool {
        Self::KEYS.iter().any(|k| k.key == key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr" => self.lr = parse_value(key, value)?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "iterations" => self.iterations = parse_value(key, value)?,
            "lr_decay_at" => self.lr_decay_at = parse_value(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = parse_value(key, value)?,
            "train_seed" => self.seed = parse_value(key, value)?,
            "augment_rotate" => self.augment_rotate = parse_value(key, value)?,
            "augment_flip" => self.augment_flip = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            _ => return Err(Error::ConfigInvalid(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lr" => self.lr.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "iterations" => self.iterations.to_string(),
            "lr_decay_at" => self.lr_decay_at.to_string(),
            "lr_decay_factor" => self.lr_decay_factor.to_string(),
            "train_seed" => self.seed.to_string(),
            "augment_rotate" => self.augment_rotate.to_string(),
            "augment_flip" => self.augment_flip.to_string(),
            "eval_every" => self.eval_every.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be a finite value >= 0", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must be in [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!("lr_decay_factor {} must be in (0, 1]", self.lr_decay_factor));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.iterations == 0 && self.epochs == 0 {
            return bad("either iterations or epochs must be positive".into());
        }
        Ok(())
    }

    /// Total iterations for a training set of `n` cases.
    pub fn total_iterations(&self, n: usize) -> u64 {
        if self.iterations > 0 {
            self.iterations
        } else {
            (self.epochs * n.div_ceil(self.batch_size)) as u64
        }
    }
}
