//! Overlap and surface-distance metrics on `H×W` class-index masks.
//! Scores are percentages; distances are in pixels times `spacing`.

mod hd95;
mod report;

pub use hd95::{boundary, hd95, percentile, squared_edt, EDT_INF};
pub use report::{aggregate, evaluate_case, CaseMetrics, ClassMetrics, ClassSummary, MetricReport};

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub(crate) fn check_masks(pred: &Tensor<u8>, reference: &Tensor<u8>) -> Result<(usize, usize)> {
    match (pred.shape(), reference.shape()) {
        (&[h, w], &[rh, rw]) if (h, w) == (rh, rw) => Ok((h, w)),
        (p, r) => Err(shape_err("metric", format!("masks must be equal H×W, got {p:?} vs {r:?}"))),
    }
}

/// `(|P∩R|, |P|, |R|)` for class `c`.
fn counts(pred: &Tensor<u8>, reference: &Tensor<u8>, class: u8) -> (usize, usize, usize) {
    pred.data()
        .iter()
        .zip(reference.data())
        .fold((0, 0, 0), |(i, p, r), (&a, &b)| {
            let (a, b) = (a == class, b == class);
            (i + (a && b) as usize, p + a as usize, r + b as usize)
        })
}

/// `2|P∩R| / (|P|+|R|) · 100`; 100 when both are empty.
pub fn dice_score(pred: &Tensor<u8>, reference: &Tensor<u8>, class: u8) -> Result<f64> {
    check_masks(pred, reference)?;
    let (i, p, r) = counts(pred, reference, class);
    if p + r == 0 {
        return Ok(100.0);
    }
    Ok(200.0 * i as f64 / (p + r) as f64)
}

/// `|P∩R| / |P∪R| · 100`; 100 when both are empty.
pub fn jaccard_score(pred: &Tensor<u8>, reference: &Tensor<u8>, class: u8) -> Result<f64> {
    check_masks(pred, reference)?;
    let (i, p, r) = counts(pred, reference, class);
    let union = p + r - i;
    if union == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * i as f64 / union as f64)
}
