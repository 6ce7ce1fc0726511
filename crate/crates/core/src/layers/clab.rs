use crate::error::{shape_err, Error, Result};
use crate::layers::{Conv2d, Linear};
use crate::tensor::{Float, ParamBuilder, Session, Var};

/// How the channel vector and spatial map are combined into the gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateOrder {
    /// `σ(spatial + channel)`: both paths read the normalized branch maps
    /// and are fused before a single sigmoid.
    Fused,
    /// `σ(spatial) · σ(channel)`, where the channel vector is pooled from
    /// the branch maps after spatial gating.
    SpatialFirst,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClabConfig {
    pub in_channels: usize,
    pub n_branches: usize,
    /// Kernels per branch convolution.
    pub kernels: usize,
    pub eps: f64,
    pub order: GateOrder,
}

impl ClabConfig {
    /// Defaults: 4 branches of `C/2` kernels, `ε = 1e-5`, fused gate.
    pub fn new(in_channels: usize) -> Self {
        Self {
            in_channels,
            n_branches: 4,
            kernels: (in_channels / 2).max(1),
            eps: 1e-5,
            order: GateOrder::Fused,
        }
    }

    pub fn param_count(&self) -> usize {
        let (c, n, k) = (self.in_channels, self.n_branches, self.kernels);
        Conv2d::param_count(c, n * k, 1) + Linear::param_count(n, c) + Conv2d::param_count(n, 1, 1)
    }
}

/// Attention gate on a skip connection.
///
/// `N` branch `1×1` convolutions (`K` kernels each) are averaged over their
/// channels into `N` maps, each standardized over its spatial extent per
/// sample and stacked into `X_m: B×N×H×W`. A channel vector (spatial mean of
/// `X_m` through a linear layer, `N → C`) and a spatial map (`1×1` conv of
/// `X_m`, `N → 1`) form a gate `A ∈ (0,1)^{C×H×W}`; the output is `x ⊙ A`.
#[derive(Debug, Clone)]
pub struct Clab {
    pub cfg: ClabConfig,
    pub branches: Conv2d,
    pub gate_linear: Linear,
    pub gate_conv: Conv2d,
}

impl Clab {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, cfg: ClabConfig) -> Result<Self> {
        if cfg.in_channels == 0 || cfg.n_branches == 0 || cfg.kernels == 0 || cfg.eps <= 0.0 {
            return Err(Error::ConfigInvalid(format!("attention gate {cfg:?}")));
        }
        Ok(Self {
            cfg,
            branches: Conv2d::new(b, "branches", cfg.in_channels, cfg.n_branches * cfg.kernels, 1, 0)?,
            gate_linear: Linear::new(b, "gate_linear", cfg.n_branches, cfg.in_channels)?,
            gate_conv: Conv2d::new(b, "gate_conv", cfg.n_branches, 1, 1, 0)?,
        })
    }

    pub fn forward<'t, T: Float>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.forward_with_gate(s, x)?.0)
    }

    /// The normalized, stacked branch maps `X_m: B×N×H×W`.
    pub fn branch_maps<'t, T: Float>(&self, s: &Session<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.cfg.in_channels {
            return Err(shape_err(
                "clab",
                format!("expected B×{}×H×W, got {shape:?}", self.cfg.in_channels),
            ));
        }
        let (b, h, w) = (shape[0], shape[2], shape[3]);
        let (n, k) = (self.cfg.n_branches, self.cfg.kernels);
        self.branches
            .forward(s, x)?
            .reshape(&[b, n, k, h, w])?
            .mean_axes(&[2])?
            .reshape(&[b, n, h, w])?
            .standardize(2, T::lit(self.cfg.eps))
    }

    /// Returns the gated output and the gate `A` broadcast to `B×C×H×W`.
    pub fn forward_with_gate<'t, T: Float>(
        &self,
        s: &Session<'t, T>,
        x: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let xm = self.branch_maps(s, x)?;
        let (b, c) = (x.shape()[0], self.cfg.in_channels);
        let channel = |m: Var<'t, T>| -> Result<Var<'t, T>> {
            let pooled = m.global_avg_pool()?.reshape(&[b, self.cfg.n_branches])?;
            self.gate_linear.forward(s, pooled)?.reshape(&[b, c, 1, 1])
        };
        let gate = match self.cfg.order {
            GateOrder::Fused => {
                let spatial = self.gate_conv.forward(s, xm)?;
                spatial.add(channel(xm)?)?.sigmoid()?
            }
            GateOrder::SpatialFirst => {
                let spatial = self.gate_conv.forward(s, xm)?.sigmoid()?;
                let chan = channel(xm.mul(spatial)?)?.sigmoid()?;
                spatial.mul(chan)?
            }
        };
        Ok((x.mul(gate)?, gate))
    }
}
