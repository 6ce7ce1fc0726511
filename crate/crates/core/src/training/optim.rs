use crate::error::{Error, Result};
use crate::tensor::{Float, ParamStore, Tensor};
use crate::training::TrainConfig;

/// Momentum buffers mirroring the parameter shapes, and the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub momentum: Vec<Tensor<T>>,
    pub iteration: u64,
}

impl<T: Float> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Result<Self> {
        Ok(Self {
            momentum: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect::<Result<_>>()?,
            iteration: 0,
        })
    }
}

/// Step schedule: `lr` before `lr_decay_at`, `lr · lr_decay_factor` from it on.
pub fn lr_at(iteration: u64, cfg: &TrainConfig) -> f64 {
    if iteration >= cfg.lr_decay_at {
        cfg.lr * cfg.lr_decay_factor
    } else {
        cfg.lr
    }
}

/// One SGD step with coupled L2 decay:
/// `g' = g + wd·w` (decayed parameters only), `v ← μ·v + g'`, `w ← w − lr·v`,
/// with `lr = lr_at(state.iteration)`.
pub fn sgd_step<T: Float>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.momentum.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients and {} buffers for {} parameters",
            grads.len(),
            state.momentum.len(),
            params.len()
        )));
    }
    let lr = T::lit(lr_at(state.iteration, cfg));
    let mu = T::lit(cfg.momentum);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.momentum) {
        if !p.requires_grad {
            continue;
        }
        if g.shape() != p.value.shape() || v.shape() != p.value.shape() {
            return Err(Error::InvalidArgument(format!("gradient shape mismatch for {}", p.name)));
        }
        let wd = T::lit(if p.decay { cfg.weight_decay } else { 0.0 });
        let w = p.value.data_mut();
        for ((w, &g), v) in w.iter_mut().zip(g.data()).zip(v.data_mut()) {
            *v = mu * *v + g + wd * *w;
            *w -= lr * *v;
        }
    }
    state.iteration += 1;
    Ok(())
}
