use std::path::{Path, PathBuf};

use crate::data::codec::{put_str, put_tensor, put_u32, seal, unseal, Reader};
use crate::error::{Error, Result};
use crate::model::{parse_kv, parse_value, ModelConfig, TfcnsModel};
use crate::tensor::{Float, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TFCN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Record-name prefix of optimizer momentum buffers.
pub const MOMENTUM_PREFIX: &str = "optim.momentum.";

const META_PREFIX: &str = "checkpoint.";

/// Training progress stored alongside the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    /// Iterations completed.
    pub iteration: u64,
    /// Seed of the training random stream; draws for iteration `i` come
    /// from stream `i`, so this plus `iteration` is the full RNG state.
    pub rng_seed: u64,
    pub best_dice: Option<f64>,
}

/// A decoded checkpoint file.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Float> {
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
    /// Parameters in registry order.
    pub params: Vec<(String, Tensor<T>)>,
    /// Momentum buffers keyed by parameter name; empty when not saved.
    pub momentum: Vec<(String, Tensor<T>)>,
}

fn meta_text(meta: &CheckpointMeta) -> String {
    let mut s = format!(
        "{META_PREFIX}iteration = {}\n{META_PREFIX}rng_seed = {}\n",
        meta.iteration, meta.rng_seed
    );
    if let Some(d) = meta.best_dice {
        s.push_str(&format!("{META_PREFIX}best_dice = {d}\n"));
    }
    s
}

/// Layout: `"TFCN"`, u32 version, length-prefixed config text, u32 record
/// count, records `(name, dtype, rank, u32 dims, payload)`, u32 CRC32 of all
/// preceding bytes.
pub fn encode_checkpoint<T: Float>(
    model: &TfcnsModel<T>,
    momentum: Option<&[Tensor<T>]>,
    meta: &CheckpointMeta,
) -> Result<Vec<u8>> {
    if let Some(m) = momentum {
        if m.len() != model.params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} momentum buffers for {} parameters",
                m.len(),
                model.params.len()
            )));
        }
    }
    let mut out = CHECKPOINT_MAGIC.to_vec();
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_str(&mut out, &format!("{}{}", model.cfg.to_text(), meta_text(meta)));
    let n = model.params.len() * if momentum.is_some() { 2 } else { 1 };
    put_u32(&mut out, n as u32);
    for p in model.params.iter() {
        put_str(&mut out, &p.name);
        put_tensor(&mut out, &p.value);
    }
    if let Some(m) = momentum {
        for (p, buf) in model.params.iter().zip(m) {
            put_str(&mut out, &format!("{MOMENTUM_PREFIX}{}", p.name));
            put_tensor(&mut out, buf);
        }
    }
    seal(&mut out);
    Ok(out)
}

pub fn decode_checkpoint<T: Float>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("checkpoint: bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let body = unseal(bytes, "checkpoint")?;
    let mut r = Reader::new(&body[8..], "checkpoint");
    let text = r.string()?;
    let mut model_text = String::new();
    let mut meta = CheckpointMeta {
        iteration: 0,
        rng_seed: 0,
        best_dice: None,
    };
    for (k, v) in parse_kv(&text)? {
        match k.strip_prefix(META_PREFIX) {
            Some("iteration") => meta.iteration = parse_value(&k, &v)?,
            Some("rng_seed") => meta.rng_seed = parse_value(&k, &v)?,
            Some("best_dice") => meta.best_dice = Some(parse_value(&k, &v)?),
            Some(other) => return Err(Error::Format(format!("checkpoint: unknown field {other:?}"))),
            None => model_text.push_str(&format!("{k} = {v}\n")),
        }
    }
    let config = ModelConfig::from_text(&model_text)?;
    let count = r.u32()? as usize;
    let mut params = Vec::new();
    let mut momentum = Vec::new();
    for _ in 0..count {
        let name = r.string()?;
        let t = r.tensor::<T>()?;
        match name.strip_prefix(MOMENTUM_PREFIX) {
            Some(p) => momentum.push((p.to_string(), t)),
            None => params.push((name, t)),
        }
    }
    if !r.is_empty() {
        return Err(Error::Format("checkpoint: trailing bytes".into()));
    }
    Ok(Checkpoint {
        config,
        meta,
        params,
        momentum,
    })
}

pub fn save_checkpoint<T: Float>(
    path: impl AsRef<Path>,
    model: &TfcnsModel<T>,
    momentum: Option<&[Tensor<T>]>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, momentum, meta)?;
    // Write-then-rename so a crash never leaves a torn checkpoint.
    let tmp = PathBuf::from(format!("{}.tmp", path.display()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Float>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    decode_checkpoint(&std::fs::read(path)?)
}

impl<T: Float> Checkpoint<T> {
    /// Rebuilds the model from the stored config and loads every tensor.
    /// Missing, extra and misshapen parameters are format errors.
    pub fn to_model(&self) -> Result<TfcnsModel<T>> {
        let mut model = TfcnsModel::new(&self.config)?;
        if self.params.len() != model.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} parameters, the config builds {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for (name, value) in &self.params {
            let id = model
                .params
                .id_of(name)
                .ok_or_else(|| Error::Format(format!("checkpoint: unknown parameter {name:?}")))?;
            model
                .params
                .set_value(id, value.clone())
                .map_err(|e| Error::Format(format!("checkpoint: {name}: {e}")))?;
        }
        Ok(model)
    }

    /// Momentum buffers in the model's registry order, if present.
    pub fn momentum_for(&self, model: &TfcnsModel<T>) -> Result<Option<Vec<Tensor<T>>>> {
        if self.momentum.is_empty() {
            return Ok(None);
        }
        model
            .params
            .iter()
            .map(|p| {
                self.momentum
                    .iter()
                    .find(|(n, _)| *n == p.name)
                    .filter(|(_, t)| t.shape() == p.value.shape())
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| Error::Format(format!("checkpoint: no momentum for {}", p.name)))
            })
            .collect::<Result<_>>()
            .map(Some)
    }
}
