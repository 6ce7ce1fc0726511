use crate::error::{shape_err, Error, Result};
use crate::layers::Linear;
use crate::tensor::{Float, ParamBuilder, ParamId, Session, Tensor, Var};

/// Std of the Gaussian used for the class token and position table.
pub const EMBED_INIT_STD: f64 = 0.02;

/// Token embedding of a bottleneck feature map.
///
/// Every spatial position of the `Hf×Wf` map is one token (the patching is
/// done by the CNN downsampling in front of it). The tokens are projected to
/// `embed_dim`, a learned class token is prepended at index 0, and a learned
/// position table of `N+1` rows is added.
#[derive(Debug, Clone)]
pub struct PatchEmbedding {
    pub proj: Linear,
    pub cls_token: ParamId,
    pub pos_embed: ParamId,
    pub grid: (usize, usize),
    pub embed_dim: usize,
}

impl PatchEmbedding {
    pub fn new<T: Float>(
        b: &mut ParamBuilder<'_, T>,
        in_channels: usize,
        embed_dim: usize,
        grid: (usize, usize),
    ) -> Result<Self> {
        let n = grid.0 * grid.1;
        if n == 0 {
            return Err(Error::ConfigInvalid("empty token grid".into()));
        }
        Ok(Self {
            proj: Linear::new(b, "proj", in_channels, embed_dim)?,
            cls_token: b.normal("cls_token", &[1, embed_dim], EMBED_INIT_STD, false)?,
            pos_embed: b.normal("pos_embed", &[n + 1, embed_dim], EMBED_INIT_STD, false)?,
            grid,
            embed_dim,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Sequence length including the class token.
    pub fn seq_len(&self) -> usize {
        self.num_tokens() + 1
    }

    pub fn param_count(in_channels: usize, embed_dim: usize, n_tokens: usize) -> usize {
        Linear::param_count(in_channels, embed_dim) + embed_dim + (n_tokens + 1) * embed_dim
    }

    /// `B×C×Hf×Wf → B×(N+1)×D`.
    pub fn forward<'t, T: Float>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 4 || (shape[2], shape[3]) != self.grid || shape[1] != self.proj.in_dim {
            return Err(shape_err(
                "patch_embed",
                format!(
                    "expected B×{}×{}×{}, got {shape:?}",
                    self.proj.in_dim, self.grid.0, self.grid.1
                ),
            ));
        }
        let (batch, ch, n) = (shape[0], shape[1], self.num_tokens());
        let tokens = x.reshape(&[batch, ch, n])?.permute(&[0, 2, 1])?;
        let tokens = self.proj.forward(s, tokens)?;
        let zeros = s.tape().constant(Tensor::zeros(&[batch, 1, self.embed_dim])?);
        let cls = s.param(self.cls_token).reshape(&[1, 1, self.embed_dim])?.add(zeros)?;
        s.tape().concat(&[cls, tokens], 1)?.add(s.param(self.pos_embed))
    }
}

/// Drops the class token and folds `B×(N+1)×D` tokens back to `B×D×Hf×Wf`.
pub fn tokens_to_map<'t, T: Float>(z: Var<'t, T>, hf: usize, wf: usize) -> Result<Var<'t, T>> {
    let shape = z.shape();
    if shape.len() != 3 || shape[1] != hf * wf + 1 {
        return Err(shape_err(
            "tokens_to_map",
            format!("sequence {shape:?} does not hold {hf}×{wf} tokens plus a class token"),
        ));
    }
    let (batch, d) = (shape[0], shape[2]);
    z.narrow(1, 1, hf * wf)?.permute(&[0, 2, 1])?.reshape(&[batch, d, hf, wf])
}
