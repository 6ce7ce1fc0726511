//! Training losses on `B×K×H×W` logits against `B×H×W` class-index masks.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Float, Tensor, Var};

/// Additive smoothing in the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1e-5;

/// Weight of each term in [`combined_loss`].
pub const LOSS_WEIGHT: f64 = 0.5;

/// The combined loss and its two terms, all on the same tape.
#[derive(Clone, Copy)]
pub struct LossParts<'t, T: Float> {
    pub total: Var<'t, T>,
    pub dice: Var<'t, T>,
    pub ce: Var<'t, T>,
}

/// `B×K×H×W` one-hot encoding of `target`.
pub fn one_hot<T: Float>(target: &Tensor<u8>, num_classes: usize) -> Result<Tensor<T>> {
    let &[b, h, w] = target.shape() else {
        return Err(shape_err("one_hot", format!("mask must be B×H×W, got {:?}", target.shape())));
    };
    let hw = h * w;
    let mut out = vec![T::zero(); b * num_classes * hw];
    for (i, &c) in target.data().iter().enumerate() {
        let c = c as usize;
        if c >= num_classes {
            return Err(Error::ClassOutOfRange { class: c, num_classes });
        }
        let (n, p) = (i / hw, i % hw);
        out[(n * num_classes + c) * hw + p] = T::one();
    }
    Tensor::from_vec(&[b, num_classes, h, w], out)
}

fn check_pair<T: Float>(logits: Var<'_, T>, target: &Tensor<u8>) -> Result<usize> {
    let ls = logits.shape();
    let ts = target.shape();
    if ls.len() != 4 || ts.len() != 3 || ls[0] != ts[0] || ls[2..] != ts[1..] {
        return Err(shape_err("loss", format!("logits {ls:?} vs mask {ts:?}")));
    }
    Ok(ls[1])
}

/// Soft Dice loss, `1 − mean_c (2Σpg + s)/(Σp + Σg + s)` with `p` the
/// softmax probabilities. Sums run over the whole batch; every class,
/// background included, enters the mean.
pub fn dice_loss<'t, T: Float>(logits: Var<'t, T>, target: &Tensor<u8>) -> Result<Var<'t, T>> {
    let k = check_pair(logits, target)?;
    let tape = logits.tape();
    let g = one_hot::<T>(target, k)?;
    let smooth = T::lit(DICE_SMOOTH);
    let g_sum = Tensor::from_vec(&[1, k, 1, 1], {
        let hw = g.numel() / (g.shape()[0] * k);
        let mut sums = vec![T::zero(); k];
        for (i, &v) in g.data().iter().enumerate() {
            sums[(i / hw) % k] += v;
        }
        sums.into_iter().map(|s| s + smooth).collect()
    })?;
    let p = logits.softmax(1)?;
    let inter = p.mul(tape.constant(g))?.sum_axes(&[0, 2, 3])?;
    let denom = p.sum_axes(&[0, 2, 3])?.add(tape.constant(g_sum))?;
    let ratio = inter.affine(T::lit(2.0), smooth)?.div(denom)?;
    ratio.mean()?.affine(-T::one(), T::one())
}

/// Mean over pixels of `−log softmax(logits)[target]`.
pub fn cross_entropy_loss<'t, T: Float>(logits: Var<'t, T>, target: &Tensor<u8>) -> Result<Var<'t, T>> {
    let k = check_pair(logits, target)?;
    let g = one_hot::<T>(target, k)?;
    let pixels = target.numel();
    let picked = logits.log_softmax(1)?.mul(logits.tape().constant(g))?.sum()?;
    picked.scale(-T::one() / T::lit(pixels as f64))
}

/// `0.5·Dice + 0.5·CE`, returned with both terms.
pub fn combined_loss_parts<'t, T: Float>(logits: Var<'t, T>, target: &Tensor<u8>) -> Result<LossParts<'t, T>> {
    let dice = dice_loss(logits, target)?;
    let ce = cross_entropy_loss(logits, target)?;
    let total = dice.add(ce)?.scale(T::lit(LOSS_WEIGHT))?;
    Ok(LossParts { total, dice, ce })
}

pub fn combined_loss<'t, T: Float>(logits: Var<'t, T>, target: &Tensor<u8>) -> Result<Var<'t, T>> {
    Ok(combined_loss_parts(logits, target)?.total)
}
