//! The flat `key = value` run configuration: model, training and path keys.

use std::path::Path;

use tfcns::model::{parse_kv, KeyDoc, ModelConfig};
use tfcns::training::TrainConfig;
use tfcns::{Error, Result};

/// Dataset, output and checkpoint settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PathConfig {
    /// Directory of `<id>.img.tnsr` / `<id>.msk.tnsr` pairs; empty generates a synthetic set.
    pub dataset_dir: String,
    pub out_dir: String,
    pub checkpoint: String,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub synthetic_cases: usize,
    pub synthetic_seed: u64,
    pub method: String,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            dataset_dir: String::new(),
            out_dir: "runs".into(),
            checkpoint: String::new(),
            train_fraction: 1.0,
            split_seed: 0,
            synthetic_cases: 8,
            synthetic_seed: 0,
            method: "TFCNs".into(),
        }
    }
}

impl PathConfig {
    pub const KEYS: &'static [KeyDoc] = &[
        KeyDoc { key: "dataset_dir", help: "directory of .img.tnsr/.msk.tnsr pairs, empty for synthetic data" },
        KeyDoc { key: "out_dir", help: "directory for logs, checkpoints and outputs" },
        KeyDoc { key: "checkpoint", help: "checkpoint to evaluate, predict with, or resume training from" },
        KeyDoc { key: "train_fraction", help: "share of cases used for training; the rest is held out" },
        KeyDoc { key: "split_seed", help: "seed of the train/held-out shuffle" },
        KeyDoc { key: "synthetic_cases", help: "number of generated cases when dataset_dir is empty" },
        KeyDoc { key: "synthetic_seed", help: "seed of the synthetic generator" },
        KeyDoc { key: "method", help: "method label in metric tables" },
    ];

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<u64> {
            v.parse().map_err(|_| Error::ConfigInvalid(format!("{key}: cannot parse {v:?}")))
        };
        match key {
            "dataset_dir" => self.dataset_dir = value.into(),
            "out_dir" => self.out_dir = value.into(),
            "checkpoint" => self.checkpoint = value.into(),
            "train_fraction" => {
                self.train_fraction = value
                    .parse()
                    .ok()
                    .filter(|f| (0.0..=1.0).contains(f))
                    .ok_or_else(|| Error::ConfigInvalid(format!("train_fraction: {value:?} is not in [0,1]")))?
            }
            "split_seed" => self.split_seed = num(value)?,
            "synthetic_cases" => self.synthetic_cases = num(value)? as usize,
            "synthetic_seed" => self.synthetic_seed = num(value)?,
            "method" => self.method = value.into(),
            _ => return Err(Error::ConfigInvalid(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "dataset_dir" => self.dataset_dir.clone(),
            "out_dir" => self.out_dir.clone(),
            "checkpoint" => self.checkpoint.clone(),
            "train_fraction" => self.train_fraction.to_string(),
            "split_seed" => self.split_seed.to_string(),
            "synthetic_cases" => self.synthetic_cases.to_string(),
            "synthetic_seed" => self.synthetic_seed.to_string(),
            "method" => self.method.clone(),
            _ => return None,
        })
    }
}

/// Every accepted key, grouped as model, training, paths.
pub fn schema() -> impl Iterator<Item = &'static KeyDoc> {
    ModelConfig::KEYS.iter().chain(TrainConfig::KEYS).chain(PathConfig::KEYS)
}

/// Help text listing every key with its default.
pub fn keys_help() -> String {
    let defaults = RunConfig::default();
    let width = schema().map(|k| k.key.len()).max().unwrap_or(0);
    let mut s = String::from("Config keys (set in --config files or with --set key=value):\n");
    for k in schema() {
        let d = defaults.get(k.key).unwrap_or_default();
        s.push_str(&format!("  {:width$}  {} [default: {}]\n", k.key, k.help, if d.is_empty() { "\"\"" } else { &d }));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: PathConfig,
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if ModelConfig::is_key(key) {
            self.model.set(key, value)
        } else if TrainConfig::is_key(key) {
            self.train.set(key, value)
        } else {
            self.paths.set(key, value)
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.model
            .get(key)
            .or_else(|| self.train.get(key))
            .or_else(|| self.paths.get(key))
    }

    /// Applies `key = value` text on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::ConfigInvalid(format!("--set expects key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// All keys in schema order, readable back by [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        schema()
            .map(|k| format!("{} = {}\n", k.key, self.get(k.key).unwrap_or_default()))
            .collect()
    }
}
