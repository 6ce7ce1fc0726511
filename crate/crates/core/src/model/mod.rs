//! The full segmentation network: dense-block encoder, transformer
//! bottleneck, gated skips and a dense-block decoder.

mod checkpoint;
mod config;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION, MOMENTUM_PREFIX,
};
pub use config::{parse_kv, KeyDoc, MlpVariant, ModelConfig, SkipAttention};
pub(crate) use config::parse_value;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::layers::{
    tokens_to_map, Clab, ClabConfig, Conv2d, DenseBlock, DenseBlockConfig, GateOrder, LayerNorm, MhsaConfig,
    PatchEmbedding, PlainMlp, ResMlp, ResMlpConfig, RlTransformer, TransitionDown, TransitionUp,
};
use crate::tensor::{Float, ParamBuilder, ParamStore, Session, Tape, Tensor, Var};

#[derive(Debug, Clone)]
struct EncoderStage {
    block: DenseBlock,
    down: TransitionDown,
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up: TransitionUp,
    gate: Option<Clab>,
    block: DenseBlock,
}

/// Channel bookkeeping derived from a config.
#[derive(Debug, Clone, PartialEq)]
struct Plan {
    encoder: Vec<DenseBlockConfig>,
    /// Decoder blocks, deepest first.
    decoder: Vec<DenseBlockConfig>,
    head_in: usize,
}

fn plan(cfg: &ModelConfig) -> Plan {
    let layers = cfg.stage_layers();
    let block = |c, n| DenseBlockConfig {
        dropout_p: cfg.dropout_p,
        ..DenseBlockConfig::new(c, cfg.growth_rate, n)
    };
    let mut ch = cfg.first_conv_channels;
    let encoder: Vec<_> = layers
        .iter()
        .map(|&n| {
            let b = block(ch, n);
            ch = b.out_channels();
            b
        })
        .collect();
    let mut ch = cfg.embed_dim;
    let mut decoder = Vec::with_capacity(encoder.len());
    for (enc, &n) in encoder.iter().zip(&layers).rev() {
        let skip = enc.out_channels();
        let b = block(2 * skip, n);
        decoder.push(b);
        ch = b.out_channels();
    }
    Plan {
        encoder,
        decoder,
        head_in: ch,
    }
}

fn gate_config(cfg: &ModelConfig, channels: usize) -> Option<ClabConfig> {
    let order = match cfg.skip_attention {
        SkipAttention::None => return None,
        SkipAttention::Clab => GateOrder::Fused,
        SkipAttention::CuabLike => GateOrder::SpatialFirst,
    };
    let base = ClabConfig::new(channels);
    Some(ClabConfig {
        n_branches: cfg.clab_branches,
        kernels: if cfg.clab_kernels == 0 { base.kernels } else { cfg.clab_kernels },
        order,
        ..base
    })
}

impl ModelConfig {
    fn attn_config(&self) -> MhsaConfig {
        MhsaConfig {
            embed_dim: self.embed_dim,
            n_heads: self.n_heads,
            attn_dropout_p: self.dropout_p,
            dropout_p: self.dropout_p,
        }
    }

    fn mlp_config(&self) -> ResMlpConfig {
        ResMlpConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.resmlp_hidden,
            dropout_p: self.dropout_p,
        }
    }

    /// Parameter count from the per-block formulas, without building.
    pub fn param_count(&self) -> Result<usize> {
        self.validate()?;
        let p = plan(self);
        let d = self.embed_dim;
        let mut total = Conv2d::param_count(self.in_channels, self.first_conv_channels, 3);
        for b in &p.encoder {
            total += b.param_count() + TransitionDown::param_count(b.out_channels(), b.out_channels());
        }
        let bottleneck = p.encoder.last().map_or(self.first_conv_channels, |b| b.out_channels());
        total += PatchEmbedding::param_count(bottleneck, d, self.grid_size().pow(2));
        let ff = match self.mlp_variant {
            MlpVariant::ResMlp => ResMlp::param_count(&self.mlp_config()),
            MlpVariant::PlainMlp => PlainMlp::param_count(&self.mlp_config()),
        };
        total += self.transformer_layers * (self.attn_config().param_count() + ff) + LayerNorm::param_count(d);
        let mut up_in = d;
        for (b, enc) in p.decoder.iter().zip(p.encoder.iter().rev()) {
            let skip = enc.out_channels();
            total += TransitionUp::param_count(up_in, skip) + b.param_count();
            total += gate_config(self, skip).map_or(0, |g| g.param_count());
            up_in = b.out_channels();
        }
        Ok(total + Conv2d::param_count(p.head_in, self.num_classes, 1))
    }
}

/// The assembled network and its parameters.
#[derive(Debug, Clone)]
pub struct TfcnsModel<T: Float> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
    stem: Conv2d,
    encoder: Vec<EncoderStage>,
    embed: PatchEmbedding,
    transformer: RlTransformer,
    decoder: Vec<DecoderStage>,
    head: Conv2d,
}

/// Intermediate outputs of one forward pass.
pub struct ForwardTrace<'t, T: Float> {
    pub logits: Var<'t, T>,
    /// Last decoder features, the input of the `1×1` head.
    pub features: Var<'t, T>,
    /// Per decoder stage (deepest first), the skip gate when one is used.
    pub gates: Vec<Var<'t, T>>,
    /// Per transformer layer attention weights.
    pub attention: Vec<Var<'t, T>>,
}

impl<T: Float> TfcnsModel<T> {
    /// Builds with parameters drawn from `ChaCha8(cfg.seed)`.
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        Self::build(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
    }

    pub fn build(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let p = plan(cfg);
        let mut params = ParamStore::new();
        let mut b = ParamBuilder::new(&mut params, rng);
        let stem = Conv2d::new(&mut b, "stem.conv", cfg.in_channels, cfg.first_conv_channels, 3, 1)?;
        let encoder = p
            .encoder
            .iter()
            .enumerate()
            .map(|(s, &bc)| {
                let mut sb = b.sub(&format!("encoder.{s}"));
                Ok(EncoderStage {
                    block: DenseBlock::new(&mut sb.sub("block"), bc)?,
                    down: TransitionDown::new(&mut sb.sub("down"), bc.out_channels(), bc.out_channels())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let bottleneck = p.encoder.last().map_or(cfg.first_conv_channels, |bc| bc.out_channels());
        let g = cfg.grid_size();
        let embed = PatchEmbedding::new(&mut b.sub("embed"), bottleneck, cfg.embed_dim, (g, g))?;
        let transformer = RlTransformer::new(
            &mut b.sub("transformer"),
            cfg.transformer_layers,
            cfg.attn_config(),
            cfg.mlp_config(),
            cfg.mlp_variant == MlpVariant::PlainMlp,
        )?;
        let mut up_in = cfg.embed_dim;
        let mut decoder = Vec::with_capacity(p.decoder.len());
        for (i, (&bc, enc)) in p.decoder.iter().zip(p.encoder.iter().rev()).enumerate() {
            let stage = p.encoder.len() - 1 - i;
            let skip = enc.out_channels();
            let mut sb = b.sub(&format!("decoder.{stage}"));
            let up = TransitionUp::new(&mut sb.sub("up"), up_in, skip)?;
            let gate = gate_config(cfg, skip).map(|gc| Clab::new(&mut sb.sub("gate"), gc)).transpose()?;
            let block = DenseBlock::new(&mut sb.sub("block"), bc)?;
            up_in = bc.out_channels();
            decoder.push(DecoderStage { up, gate, block });
        }
        let head = Conv2d::new(&mut b, "head.conv", p.head_in, cfg.num_classes, 1, 0)?;
        Ok(Self {
            cfg: cfg.clone(),
            params,
            stem,
            encoder,
            embed,
            transformer,
            decoder,
            head,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let s = self.cfg.input_size;
        match shape {
            [_, c, h, w] if *c == self.cfg.in_channels && *h == s && *w == s => Ok(()),
            _ => Err(shape_err(
                "model input",
                format!("expected B×{}×{s}×{s}, got {shape:?}", self.cfg.in_channels),
            )),
        }
    }

    /// Runs the network and keeps the intermediate outputs.
    pub fn trace<'t>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<ForwardTrace<'t, T>> {
        self.check_input(&x.shape())?;
        let mut h = self.stem.forward(s, x)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for stage in &self.encoder {
            h = stage.block.forward(s, h)?;
            skips.push(h);
            h = stage.down.forward(s, h)?;
        }
        let g = self.cfg.grid_size();
        let (z, attention) = self.transformer.forward_with_attention(s, self.embed.forward(s, h)?)?;
        h = tokens_to_map(z, g, g)?;
        let mut gates = Vec::new();
        for (stage, skip) in self.decoder.iter().zip(skips.into_iter().rev()) {
            let up = stage.up.forward(s, h)?;
            let skip = match &stage.gate {
                Some(gate) => {
                    let (y, a) = gate.forward_with_gate(s, skip)?;
                    gates.push(a);
                    y
                }
                None => skip,
            };
            h = stage.block.forward(s, s.tape().concat(&[up, skip], 1)?)?;
        }
        Ok(ForwardTrace {
            logits: self.head.forward(s, h)?,
            features: h,
            gates,
            attention,
        })
    }

    /// `B×in×H×W → B×num_classes×H×W` logits.
    pub fn forward<'t>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.trace(s, x)?.logits)
    }

    /// Inference-mode logits without recording a tape.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::no_grad();
        let s = Session::new(&tape, &self.params, false, 0);
        Ok(self.forward(&s, tape.constant(x.clone()))?.value())
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<u8>> {
        argmax_classes(&self.infer(x)?)
    }

    /// Per-sample heatmaps in `[0,1]` for `class`, shape `B×H×W`.
    pub fn class_activation_map(&self, x: &Tensor<T>, class: usize) -> Result<Tensor<T>> {
        if class >= self.cfg.num_classes {
            return Err(Error::ClassOutOfRange {
                class,
                num_classes: self.cfg.num_classes,
            });
        }
        let tape = Tape::no_grad();
        let s = Session::new(&tape, &self.params, false, 0);
        let features = self.trace(&s, tape.constant(x.clone()))?.features.value();
        let w = &self.params.get(self.head.weight).value;
        let c = w.shape()[1];
        cam_from_features(&features, &w.data()[class * c..(class + 1) * c])
    }
}

/// Per-pixel argmax over axis 1 of `B×K×H×W` logits. Ties resolve to the
/// lowest class index.
pub fn argmax_classes<T: Float>(logits: &Tensor<T>) -> Result<Tensor<u8>> {
    let &[b, k, h, w] = logits.shape() else {
        return Err(shape_err("argmax", format!("expected B×K×H×W, got {:?}", logits.shape())));
    };
    if k > 256 {
        return Err(Error::InvalidArgument(format!("{k} classes do not fit a u8 mask")));
    }
    let hw = h * w;
    let d = logits.data();
    let out = (0..b * hw)
        .map(|i| {
            let (n, p) = (i / hw, i % hw);
            let at = |c: usize| d[(n * k + c) * hw + p];
            (1..k).fold(0, |best, c| if at(c) > at(best) { c } else { best }) as u8
        })
        .collect();
    Tensor::from_vec(&[b, h, w], out)
}

/// `ReLU(Σ_c w_c·F_c)` normalized per sample by its min and max; a constant
/// map yields zeros.
pub fn cam_from_features<T: Float>(features: &Tensor<T>, weights: &[T]) -> Result<Tensor<T>> {
    let &[b, c, h, w] = features.shape() else {
        return Err(shape_err("cam", format!("expected B×C×H×W, got {:?}", features.shape())));
    };
    if weights.len() != c {
        return Err(shape_err("cam", format!("{} weights for {c} channels", weights.len())));
    }
    let hw = h * w;
    let f = features.data();
    let mut out = vec![T::zero(); b * hw];
    for (n, map) in out.chunks_mut(hw).enumerate() {
        for (ch, &wc) in weights.iter().enumerate() {
            let src = &f[(n * c + ch) * hw..(n * c + ch + 1) * hw];
            for (o, &v) in map.iter_mut().zip(src) {
                *o += wc * v;
            }
        }
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for o in map.iter_mut() {
            *o = o.max(T::zero());
            lo = lo.min(*o);
            hi = hi.max(*o);
        }
        let range = hi - lo;
        for o in map.iter_mut() {
            *o = if range > T::zero() { (*o - lo) / range } else { T::zero() };
        }
    }
    Tensor::from_vec(&[b, h, w], out)
}
