use crate::error::Result;
use crate::layers::{FeedForward, LayerNorm, MhsaBlock, MhsaConfig, PlainMlp, ResMlp, ResMlpConfig};
use crate::tensor::{Float, ParamBuilder, Session, Var};

/// `L` layers of (attention block, feed-forward block) and a final LayerNorm.
#[derive(Debug, Clone)]
pub struct RlTransformer {
    pub layers: Vec<(MhsaBlock, FeedForward)>,
    pub final_norm: LayerNorm,
}

impl RlTransformer {
    /// `plain_mlp` swaps every residual MLP for a standard two-layer MLP.
    pub fn new<T: Float>(
        b: &mut ParamBuilder<'_, T>,
        n_layers: usize,
        attn: MhsaConfig,
        mlp: ResMlpConfig,
        plain_mlp: bool,
    ) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|l| {
                let mut lb = b.sub(&format!("layer{l}"));
                let mhsa = MhsaBlock::new(&mut lb.sub("attn"), attn)?;
                let mut fb = lb.sub("mlp");
                let ff = if plain_mlp {
                    FeedForward::Plain(PlainMlp::new(&mut fb, mlp)?)
                } else {
                    FeedForward::Res(ResMlp::new(&mut fb, mlp)?)
                };
                Ok((mhsa, ff))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            final_norm: LayerNorm::new(b, "norm", attn.embed_dim)?,
        })
    }

    pub fn forward<'t, T: Float>(&self, s: &Session<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.forward_with_attention(s, z)?.0)
    }

    /// Also returns each layer's attention weights.
    pub fn forward_with_attention<'t, T: Float>(
        &self,
        s: &Session<'t, T>,
        mut z: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Vec<Var<'t, T>>)> {
        let mut maps = Vec::with_capacity(self.layers.len());
        for (attn, ff) in &self.layers {
            let (next, a) = attn.forward_with_attention(s, z)?;
            maps.push(a);
            z = ff.forward(s, next)?;
        }
        Ok((self.final_norm.forward(s, z)?, maps))
    }
}
