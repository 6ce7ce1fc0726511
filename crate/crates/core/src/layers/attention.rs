use crate::error::{Error, Result};
use crate::layers::{LayerNorm, Linear};
use crate::tensor::{Float, ParamBuilder, Session, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhsaConfig {
    pub embed_dim: usize,
    pub n_heads: usize,
    pub attn_dropout_p: f64,
    pub dropout_p: f64,
}

impl MhsaConfig {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn param_count(&self) -> usize {
        LayerNorm::param_count(self.embed_dim) + 4 * Linear::param_count(self.embed_dim, self.embed_dim)
    }
}

/// Pre-norm residual multi-head self-attention, `z + MHSA(LN(z))`.
#[derive(Debug, Clone)]
pub struct MhsaBlock {
    pub cfg: MhsaConfig,
    pub norm: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

impl MhsaBlock {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, cfg: MhsaConfig) -> Result<Self> {
        if cfg.n_heads == 0 || cfg.embed_dim % cfg.n_heads != 0 {
            return Err(Error::ConfigInvalid(format!(
                "embed_dim {} is not divisible by {} heads",
                cfg.embed_dim, cfg.n_heads
            )));
        }
        let d = cfg.embed_dim;
        Ok(Self {
            cfg,
            norm: LayerNorm::new(b, "norm", d)?,
            query: Linear::new(b, "query", d, d)?,
            key: Linear::new(b, "key", d, d)?,
            value: Linear::new(b, "value", d, d)?,
            out: Linear::new(b, "out", d, d)?,
        })
    }

    pub fn forward<'t, T: Float>(&self, s: &Session<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.forward_with_attention(s, z)?.0)
    }

    /// Also returns the `B×h×T×T` attention weights (before dropout).
    pub fn forward_with_attention<'t, T: Float>(
        &self,
        s: &Session<'t, T>,
        z: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let shape = z.shape();
        let (batch, tokens) = (shape[0], shape[1]);
        let (heads, hd) = (self.cfg.n_heads, self.cfg.head_dim());
        let h = self.norm.forward(s, z)?;
        let split = |proj: &Linear| -> Result<Var<'t, T>> {
            proj.forward(s, h)?.reshape(&[batch, tokens, heads, hd])?.permute(&[0, 2, 1, 3])
        };
        let (q, k, v) = (split(&self.query)?, split(&self.key)?, split(&self.value)?);
        let scale = T::one() / T::lit(hd as f64).sqrt();
        let attn = q.matmul(k.transpose(2, 3)?)?.scale(scale)?.softmax(3)?;
        let ctx = s.dropout(attn, self.cfg.attn_dropout_p)?.matmul(v)?;
        let ctx = ctx.permute(&[0, 2, 1, 3])?.reshape(&[batch, tokens, heads * hd])?;
        let out = s.dropout(self.out.forward(s, ctx)?, self.cfg.dropout_p)?;
        Ok((out.add(z)?, attn))
    }
}
