use crate::error::{Error, Result};
use crate::layers::Conv2d;
use crate::tensor::{Float, ParamBuilder, Session, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseBlockConfig {
    pub in_channels: usize,
    /// Channels appended by each internal layer.
    pub growth_rate: usize,
    pub n_layers: usize,
    pub kernel: usize,
    pub dropout_p: f64,
}

impl DenseBlockConfig {
    pub fn new(in_channels: usize, growth_rate: usize, n_layers: usize) -> Self {
        Self {
            in_channels,
            growth_rate,
            n_layers,
            kernel: 3,
            dropout_p: 0.0,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels + self.n_layers * self.growth_rate
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers)
            .map(|l| Conv2d::param_count(self.in_channels + l * self.growth_rate, self.growth_rate, self.kernel))
            .sum()
    }
}

/// Dense block: every layer sees the concatenation of the block input and
/// all earlier layer outputs, and contributes `growth_rate` new channels.
///
/// Layer recipe: `3×3 conv → GELU → dropout`, spatial size preserved.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    pub cfg: DenseBlockConfig,
    layers: Vec<Conv2d>,
}

impl DenseBlock {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, cfg: DenseBlockConfig) -> Result<Self> {
        if cfg.kernel % 2 == 0 || cfg.growth_rate == 0 || cfg.in_channels == 0 {
            return Err(Error::ConfigInvalid(format!("dense block {cfg:?}")));
        }
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let in_ch = cfg.in_channels + l * cfg.growth_rate;
                Conv2d::new(b, &format!("layer{l}.conv"), in_ch, cfg.growth_rate, cfg.kernel, cfg.kernel / 2)
            })
            .collect::<Result<_>>()?;
        Ok(Self { cfg, layers })
    }

    pub fn layers(&self) -> &[Conv2d] {
        &self.layers
    }

    pub fn forward<'t, T: Float>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut feats = x;
        for conv in &self.layers {
            let h = conv.forward(s, feats)?.gelu()?;
            let h = s.dropout(h, self.cfg.dropout_p)?;
            feats = s.tape().concat(&[feats, h], 1)?;
        }
        Ok(feats)
    }
}

/// `1×1 conv → GELU → 2×2 average pool`, halving resolution.
#[derive(Debug, Clone)]
pub struct TransitionDown {
    pub conv: Conv2d,
}

impl TransitionDown {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(b, "conv", in_ch, out_ch, 1, 0)?,
        })
    }

    pub fn param_count(in_ch: usize, out_ch: usize) -> usize {
        Conv2d::param_count(in_ch, out_ch, 1)
    }

    pub fn forward<'t, T: Float>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.conv.forward(s, x)?.gelu()?.avg_pool2d(2)
    }
}

/// Stride-2 `2×2` transposed convolution, doubling resolution.
#[derive(Debug, Clone)]
pub struct TransitionUp {
    pub weight: crate::tensor::ParamId,
    pub bias: crate::tensor::ParamId,
}

impl TransitionUp {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, in_ch: usize, out_ch: usize) -> Result<Self> {
        let mut b = b.sub("deconv");
        Ok(Self {
            weight: b.he("weight", &[in_ch, out_ch, 2, 2], in_ch)?,
            bias: b.bias("bias", &[out_ch])?,
        })
    }

    pub fn param_count(in_ch: usize, out_ch: usize) -> usize {
        in_ch * out_ch * 4 + out_ch
    }

    pub fn forward<'t, T: Float>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv_transpose2d(s.param(self.weight), Some(s.param(self.bias)), 2)
    }
}
