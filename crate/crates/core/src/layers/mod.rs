//! Network building blocks. Each block owns the ids of its parameters and
//! runs its forward pass on a [`Session`].

mod attention;
mod clab;
mod dense;
mod embedding;
mod mlp;
mod transformer;

pub use attention::{MhsaBlock, MhsaConfig};
pub use clab::{Clab, ClabConfig, GateOrder};
pub use dense::{DenseBlock, DenseBlockConfig, TransitionDown, TransitionUp};
pub use embedding::{tokens_to_map, PatchEmbedding};
pub use mlp::{FeedForward, PlainMlp, ResMlp, ResMlpConfig};
pub use transformer::RlTransformer;

use crate::error::Result;
use crate::tensor::{Float, ParamBuilder, ParamId, Session, Var};

/// LayerNorm epsilon used by every transformer block.
pub const LN_EPS: f64 = 1e-6;

/// Affine map over the last axis, `x·W + b` with `W: in×out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let mut b = b.sub(name);
        Ok(Self {
            weight: b.he("weight", &[in_dim, out_dim], in_dim)?,
            bias: b.bias("bias", &[out_dim])?,
            in_dim,
            out_dim,
        })
    }

    pub fn param_count(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }

    pub fn forward<'t, T: Float>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(s.param(self.weight))?.add(s.param(self.bias))
    }
}

/// Square-kernel convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new<T: Float>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        padding: usize,
    ) -> Result<Self> {
        let mut b = b.sub(name);
        Ok(Self {
            weight: b.he("weight", &[out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel)?,
            bias: b.bias("bias", &[out_ch])?,
            kernel,
            stride: 1,
            padding,
        })
    }

    pub fn param_count(in_ch: usize, out_ch: usize, kernel: usize) -> usize {
        out_ch * in_ch * kernel * kernel + out_ch
    }

    pub fn forward<'t, T: Float>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(s.param(self.weight), Some(s.param(self.bias)), self.stride, self.padding)
    }
}

/// LayerNorm over the last axis with learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, name: &str, dim: usize) -> Result<Self> {
        let mut b = b.sub(name);
        Ok(Self {
            gamma: b.constant("weight", &[dim], 1.0, true)?,
            beta: b.bias("bias", &[dim])?,
        })
    }

    pub fn param_count(dim: usize) -> usize {
        2 * dim
    }

    pub fn forward<'t, T: Float>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(s.param(self.gamma), s.param(self.beta), T::lit(LN_EPS))
    }
}
