#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tfcns::tensor::{Tensor, Var};
use tfcns::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng(seed)).unwrap()
}

/// Reduces `v` to a scalar through fixed pseudo-random weights so that no
/// gradient vanishes by symmetry.
pub fn probe<'t>(v: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let weights = Tensor::uniform(&v.shape(), 0.5, 1.5, &mut rng(seed ^ 0x9e37)).unwrap();
    let signs = Tensor::from_fn(&v.shape(), |i| if i % 3 == 0 { -1.0 } else { 1.0 }).unwrap();
    let w = v.tape().constant(weights).mul(v.tape().constant(signs))?;
    v.mul(w)?.sum()
}
