use crate::error::Result;
use crate::layers::{LayerNorm, Linear};
use crate::tensor::{Float, ParamBuilder, ParamId, Session, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResMlpConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub dropout_p: f64,
}

/// Feed-forward block with an inner residual and a learned scalar gain.
///
/// With `z'' = LN(z)`:
///
/// ```text
/// inner = z'' + Drop(L2(α · Drop(GELU(L1(z'')))))
/// out   = z + Drop(L3(GELU(inner)))
/// ```
///
/// Three linears, two GELUs and three dropouts; `α` starts at 1.
#[derive(Debug, Clone)]
pub struct ResMlp {
    pub cfg: ResMlpConfig,
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub fc3: Linear,
    pub alpha: ParamId,
}

impl ResMlp {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, cfg: ResMlpConfig) -> Result<Self> {
        let (d, hdim) = (cfg.embed_dim, cfg.hidden_dim);
        Ok(Self {
            cfg,
            norm: LayerNorm::new(b, "norm", d)?,
            fc1: Linear::new(b, "fc1", d, hdim)?,
            fc2: Linear::new(b, "fc2", hdim, d)?,
            fc3: Linear::new(b, "fc3", d, d)?,
            alpha: b.constant("alpha", &[1], 1.0, false)?,
        })
    }

    pub fn param_count(cfg: &ResMlpConfig) -> usize {
        let (d, h) = (cfg.embed_dim, cfg.hidden_dim);
        LayerNorm::param_count(d) + Linear::param_count(d, h) + Linear::param_count(h, d) + Linear::param_count(d, d) + 1
    }

    /// `z'' + Drop(L2(α·Drop(GELU(L1(z'')))))` for an already normalized input.
    pub fn inner<'t, T: Float>(&self, s: &Session<'t, T>, normed: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = s.dropout(self.fc1.forward(s, normed)?.gelu()?, self.cfg.dropout_p)?;
        let h = h.mul(s.param(self.alpha))?;
        let h = s.dropout(self.fc2.forward(s, h)?, self.cfg.dropout_p)?;
        normed.add(h)
    }

    pub fn forward<'t, T: Float>(&self, s: &Session<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let inner = self.inner(s, self.norm.forward(s, z)?)?;
        let body = s.dropout(self.fc3.forward(s, inner.gelu()?)?, self.cfg.dropout_p)?;
        body.add(z)
    }
}

/// Standard transformer MLP, `z + Drop(L2(Drop(GELU(L1(LN(z))))))`.
#[derive(Debug, Clone)]
pub struct PlainMlp {
    pub cfg: ResMlpConfig,
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl PlainMlp {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, cfg: ResMlpConfig) -> Result<Self> {
        let (d, hdim) = (cfg.embed_dim, cfg.hidden_dim);
        Ok(Self {
            cfg,
            norm: LayerNorm::new(b, "norm", d)?,
            fc1: Linear::new(b, "fc1", d, hdim)?,
            fc2: Linear::new(b, "fc2", hdim, d)?,
        })
    }

    pub fn param_count(cfg: &ResMlpConfig) -> usize {
        let (d, h) = (cfg.embed_dim, cfg.hidden_dim);
        LayerNorm::param_count(d) + Linear::param_count(d, h) + Linear::param_count(h, d)
    }

    pub fn forward<'t, T: Float>(&self, s: &Session<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = s.dropout(self.fc1.forward(s, self.norm.forward(s, z)?)?.gelu()?, self.cfg.dropout_p)?;
        let h = s.dropout(self.fc2.forward(s, h)?, self.cfg.dropout_p)?;
        h.add(z)
    }
}

/// The feed-forward half of a transformer layer.
#[derive(Debug, Clone)]
pub enum FeedForward {
    Res(ResMlp),
    Plain(PlainMlp),
}

impl FeedForward {
    pub fn forward<'t, T: Float>(&self, s: &Session<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            FeedForward::Res(m) => m.forward(s, z),
            FeedForward::Plain(m) => m.forward(s, z),
        }
    }
}
