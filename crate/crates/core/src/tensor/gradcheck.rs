//! Central finite-difference gradient verification at `f64`.

use crate::error::Result;
use crate::par;
use crate::tensor::param::{ParamId, ParamStore, Session};
use crate::tensor::storage::Tensor;
use crate::tensor::tape::{Tape, Var};

/// Gradients smaller than this are compared in absolute terms. Central
/// differences at `eps = 1e-5` carry roughly `1e-10` of rounding noise, which
/// would otherwise dominate coordinates whose true gradient is zero.
pub const GRAD_FLOOR: f64 = 1e-5;

/// `|analytic − numeric| / max(|analytic|, |numeric|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

fn scalar_of(v: Var<'_, f64>) -> Result<f64> {
    v.value().item()
}

/// Checks `d f / d x` for a scalar-valued `f`, returning the worst
/// coordinate's relative error.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>> + Sync,
{
    grad_check_many(|vars| f(vars[0]), std::slice::from_ref(x), eps)
}

/// Multi-input variant of [`grad_check`]; the maximum over all inputs.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>> + Sync,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt_or_zero(v)).collect();

    let eval = |which: usize, coord: usize, delta: f64| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<_> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut t = t.clone();
                if i == which {
                    t.data_mut()[coord] += delta;
                }
                tape.constant(t)
            })
            .collect();
        scalar_of(f(&vars)?)
    };

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |c| (i, c)))
        .collect();
    let errors = par::map_slice(&coords, |&(i, c)| -> Result<f64> {
        let numeric = (eval(i, c, eps)? - eval(i, c, -eps)?) / (2.0 * eps);
        Ok(relative_error(analytic[i].data()[c], numeric))
    });
    errors.into_iter().try_fold(0.0f64, |m, e| Ok(m.max(e?)))
}

/// Outcome of a parameter-level gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat coordinate of the worst error.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
    pub params_checked: usize,
}

/// Checks gradients of a scalar model loss with respect to every parameter
/// in `store`. At most `max_coords_per_param` evenly spaced coordinates of
/// each parameter are perturbed (`None` checks all of them).
pub fn grad_check_params<F>(
    store: &ParamStore<f64>,
    f: F,
    eps: f64,
    max_coords_per_param: Option<usize>,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&Session<'t, f64>) -> Result<Var<'t, f64>> + Sync,
{
    let tape = Tape::new();
    let session = Session::new(&tape, store, false, 0);
    let loss = f(&session)?;
    let grads = tape.backward(loss)?;
    let analytic = session.param_grads(&grads);

    let mut coords = Vec::new();
    for (pi, p) in store.iter().enumerate() {
        let n = p.value.numel();
        let take = max_coords_per_param.map_or(n, |m| m.min(n)).max(1);
        let mut last = None;
        for j in 0..take {
            let c = j * n / take;
            if last != Some(c) {
                coords.push((pi, c));
                last = Some(c);
            }
        }
    }

    let eval = |pi: usize, c: usize, delta: f64| -> Result<f64> {
        let mut perturbed = store.clone();
        let id = ParamId(pi);
        let mut value = perturbed.get(id).value.clone();
        value.data_mut()[c] += delta;
        perturbed.set_value(id, value)?;
        let tape = Tape::no_grad();
        let session = Session::new(&tape, &perturbed, false, 0);
        scalar_of(f(&session)?)
    };

    let errors = par::map_slice(&coords, |&(pi, c)| -> Result<f64> {
        let numeric = (eval(pi, c, eps)? - eval(pi, c, -eps)?) / (2.0 * eps);
        Ok(relative_error(analytic[pi].data()[c], numeric))
    });

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: coords.len(),
        params_checked: store.len(),
    };
    for (&(pi, c), e) in coords.iter().zip(errors) {
        let e = e?;
        if e > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = e;
            report.worst = Some((store.get(ParamId(pi)).name.clone(), c));
        }
    }
    Ok(report)
}
