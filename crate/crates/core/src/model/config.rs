use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One accepted `key = value` entry and its help text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyDoc {
    pub key: &'static str,
    pub help: &'static str,
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter_map(|(n, raw)| {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                return None;
            }
            Some(match line.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
                _ => Err(Error::ConfigInvalid(format!("line {}: expected `key = value`, got {raw:?}", n + 1))),
            })
        })
        .collect()
}

pub(crate) fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::ConfigInvalid(format!("{key}: cannot parse {value:?}")))
}

/// Gate used on the encoder-to-decoder skip connections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipAttention {
    /// Plain identity skips.
    None,
    /// Spatial gate first, then channel gate on the gated maps.
    CuabLike,
    Clab,
}

impl fmt::Display for SkipAttention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipAttention::None => "none",
            SkipAttention::CuabLike => "cuab_like",
            SkipAttention::Clab => "clab",
        })
    }
}

impl FromStr for SkipAttention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SkipAttention::None),
            "cuab_like" => Ok(SkipAttention::CuabLike),
            "clab" => Ok(SkipAttention::Clab),
            _ => Err(Error::ConfigInvalid(format!("skip_attention: {s:?} is not none|cuab_like|clab"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlpVariant {
    ResMlp,
    PlainMlp,
}

impl fmt::Display for MlpVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MlpVariant::ResMlp => "resmlp",
            MlpVariant::PlainMlp => "plain_mlp",
        })
    }
}

impl FromStr for MlpVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resmlp" => Ok(MlpVariant::ResMlp),
            "plain_mlp" => Ok(MlpVariant::PlainMlp),
            _ => Err(Error::ConfigInvalid(format!("mlp_variant: {s:?} is not resmlp|plain_mlp"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    /// Square input side.
    pub input_size: usize,
    pub first_conv_channels: usize,
    pub growth_rate: usize,
    /// Dense layers per encoder stage; empty picks a depth-growing default,
    /// a single entry applies to every stage.
    pub layers_per_block: Vec<usize>,
    /// Input pixels per token side; also fixes the encoder depth `log2 P`.
    pub patch_size: usize,
    pub embed_dim: usize,
    pub transformer_layers: usize,
    pub n_heads: usize,
    pub resmlp_hidden: usize,
    pub dropout_p: f64,
    pub skip_attention: SkipAttention,
    pub mlp_variant: MlpVariant,
    pub clab_branches: usize,
    /// Kernels per gate branch; 0 means half the skip channels.
    pub clab_kernels: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            num_classes: 9,
            input_size: 224,
            first_conv_channels: 32,
            growth_rate: 12,
            layers_per_block: Vec::new(),
            patch_size: 16,
            embed_dim: 64,
            transformer_layers: 4,
            n_heads: 4,
            resmlp_hidden: 128,
            dropout_p: 0.1,
            skip_attention: SkipAttention::Clab,
            mlp_variant: MlpVariant::ResMlp,
            clab_branches: 4,
            clab_kernels: 0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub const KEYS: &'static [KeyDoc] = &[
        KeyDoc { key: "in_channels", help: "image channels" },
        KeyDoc { key: "num_classes", help: "classes including background" },
        KeyDoc { key: "input_size", help: "square input side in pixels" },
        KeyDoc { key: "first_conv_channels", help: "stem convolution width" },
        KeyDoc { key: "growth_rate", help: "channels added per dense layer" },
        KeyDoc { key: "layers_per_block", help: "comma list per encoder stage, one value for all, or auto" },
        KeyDoc { key: "patch_size", help: "pixels per token side, a power of two >= 4" },
        KeyDoc { key: "embed_dim", help: "transformer width" },
        KeyDoc { key: "transformer_layers", help: "transformer depth" },
        KeyDoc { key: "n_heads", help: "attention heads" },
        KeyDoc { key: "resmlp_hidden", help: "feed-forward hidden width" },
        KeyDoc { key: "dropout_p", help: "dropout probability" },
        KeyDoc { key: "skip_attention", help: "none | cuab_like | clab" },
        KeyDoc { key: "mlp_variant", help: "resmlp | plain_mlp" },
        KeyDoc { key: "clab_branches", help: "attention gate branches" },
        KeyDoc { key: "clab_kernels", help: "kernels per gate branch, 0 for half the skip channels" },
        KeyDoc { key: "seed", help: "parameter initialization seed" },
    ];

    pub fn is_key(key: &str) -> bool {
        Self::KEYS.iter().any(|k| k.key == key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "in_channels" => self.in_channels = parse_value(key, value)?,
            "num_classes" => self.num_classes = parse_value(key, value)?,
            "input_size" => self.input_size = parse_value(key, value)?,
            "first_conv_channels" => self.first_conv_channels = parse_value(key, value)?,
            "growth_rate" => self.growth_rate = parse_value(key, value)?,
            "layers_per_block" => {
                self.layers_per_block = if value.is_empty() || value == "auto" {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| parse_value(key, v.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "patch_size" => self.patch_size = parse_value(key, value)?,
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "transformer_layers" => self.transformer_layers = parse_value(key, value)?,
            "n_heads" => self.n_heads = parse_value(key, value)?,
            "resmlp_hidden" => self.resmlp_hidden = parse_value(key, value)?,
            "dropout_p" => self.dropout_p = parse_value(key, value)?,
            "skip_attention" => self.skip_attention = value.parse()?,
            "mlp_variant" => self.mlp_variant = value.parse()?,
            "clab_branches" => self.clab_branches = parse_value(key, value)?,
            "clab_kernels" => self.clab_kernels = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(Error::ConfigInvalid(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "in_channels" => self.in_channels.to_string(),
            "num_classes" => self.num_classes.to_string(),
            "input_size" => self.input_size.to_string(),
            "first_conv_channels" => self.first_conv_channels.to_string(),
            "growth_rate" => self.growth_rate.to_string(),
            "layers_per_block" if self.layers_per_block.is_empty() => "auto".to_string(),
            "layers_per_block" => {
                let parts: Vec<String> = self.layers_per_block.iter().map(|v| v.to_string()).collect();
                parts.join(",")
            }
            "patch_size" => self.patch_size.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "transformer_layers" => self.transformer_layers.to_string(),
            "n_heads" => self.n_heads.to_string(),
            "resmlp_hidden" => self.resmlp_hidden.to_string(),
            "dropout_p" => self.dropout_p.to_string(),
            "skip_attention" => self.skip_attention.to_string(),
            "mlp_variant" => self.mlp_variant.to_string(),
            "clab_branches" => self.clab_branches.to_string(),
            "clab_kernels" => self.clab_kernels.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// All keys as `key = value` lines, in schema order.
    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{} = {}\n", k.key, self.get(k.key).unwrap()))
            .collect()
    }

    /// Starts from the defaults; unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_stages(&self) -> usize {
        self.patch_size.trailing_zeros() as usize
    }

    /// Token grid side `input_size / P`.
    pub fn grid_size(&self) -> usize {
        self.input_size / self.patch_size
    }

    /// Bottleneck token count plus the class token.
    pub fn seq_len(&self) -> usize {
        self.grid_size() * self.grid_size() + 1
    }

    /// Resolved dense-layer counts, one per encoder stage.
    pub fn stage_layers(&self) -> Vec<usize> {
        let n = self.n_stages();
        match self.layers_per_block.as_slice() {
            [] => (0..n).map(|s| if s < 2 { 4 } else { 4 + 2 * (s - 1) }).collect(),
            [one] => vec![*one; n],
            list => list.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        let p = self.patch_size;
        if p < 4 || !p.is_power_of_two() {
            return bad(format!("patch_size {p} must be a power of two >= 4"));
        }
        if self.input_size == 0 || self.input_size % p != 0 {
            return bad(format!("input_size {} is not divisible by patch_size {p}", self.input_size));
        }
        if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return bad(format!("embed_dim {} is not divisible by n_heads {}", self.embed_dim, self.n_heads));
        }
        let n = self.layers_per_block.len();
        if n > 1 && n != self.n_stages() {
            return bad(format!(
                "layers_per_block lists {n} stages, patch_size {p} needs {}",
                self.n_stages()
            ));
        }
        if !(2..=256).contains(&self.num_classes) {
            return bad(format!("num_classes {} must be in 2..=256", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} must be in [0, 1)", self.dropout_p));
        }
        let positive = [
            ("in_channels", self.in_channels),
            ("first_conv_channels", self.first_conv_channels),
            ("growth_rate", self.growth_rate),
            ("embed_dim", self.embed_dim),
            ("resmlp_hidden", self.resmlp_hidden),
            ("clab_branches", self.clab_branches),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}
