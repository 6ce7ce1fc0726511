use rand::Rng;

use crate::data::SegmentationPair;
use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Axis-aligned transforms; they permute pixels and keep labels exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augmentation {
    FlipH,
    FlipV,
    /// Counter-clockwise quarter turns, 1 to 3.
    Rot90(u8),
}

/// With probability ½ a flip (either axis equally likely), otherwise a
/// rotation by 90°, 180° or 270°. With only one kind enabled it is applied
/// with probability ½; rotations are skipped for non-square images.
pub fn draw_augmentation(rng: &mut impl Rng, rotate: bool, flip: bool, square: bool) -> Option<Augmentation> {
    let rotate = rotate && square;
    let flip_draw = |rng: &mut dyn rand::RngCore| {
        if rng.random_bool(0.5) {
            Augmentation::FlipH
        } else {
            Augmentation::FlipV
        }
    };
    match (rotate, flip) {
        (false, false) => None,
        (true, true) => Some(if rng.random_bool(0.5) {
            flip_draw(rng)
        } else {
            Augmentation::Rot90(rng.random_range(1..=3))
        }),
        (false, true) => rng.random_bool(0.5).then(|| flip_draw(rng)),
        (true, false) => rng.random_bool(0.5).then(|| Augmentation::Rot90(rng.random_range(1..=3))),
    }
}

/// Source index for output pixel `(y, x)` of an `h×w` plane.
fn source(aug: Augmentation, h: usize, w: usize, y: usize, x: usize) -> usize {
    match aug {
        Augmentation::FlipH => y * w + (w - 1 - x),
        Augmentation::FlipV => (h - 1 - y) * w + x,
        // Output is w×h for odd turns; (y, x) index the output grid.
        Augmentation::Rot90(k) => match k % 4 {
            1 => x * w + (w - 1 - y),
            2 => (h - 1 - y) * w + (w - 1 - x),
            3 => (h - 1 - x) * w + y,
            _ => y * w + x,
        },
    }
}

fn transform<T: Element>(t: &Tensor<T>, aug: Augmentation) -> Result<Tensor<T>> {
    let rank = t.rank();
    let (h, w) = (t.shape()[rank - 2], t.shape()[rank - 1]);
    let (oh, ow) = match aug {
        Augmentation::Rot90(k) if k % 2 == 1 => (w, h),
        _ => (h, w),
    };
    let planes = t.numel() / (h * w);
    let src = t.data();
    let mut out = Vec::with_capacity(t.numel());
    for p in 0..planes {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                out.push(plane[source(aug, h, w, y, x)]);
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape[rank - 2] = oh;
    shape[rank - 1] = ow;
    Tensor::from_vec(&shape, out)
}

/// Applies the same transform to image and mask.
pub fn apply_augmentation(pair: &SegmentationPair, aug: Augmentation) -> Result<SegmentationPair> {
    Ok(SegmentationPair {
        image: transform(&pair.image, aug)?,
        mask: transform(&pair.mask, aug)?,
        case_id: pair.case_id.clone(),
    })
}

pub fn augment(pair: &SegmentationPair, rng: &mut impl Rng, rotate: bool, flip: bool) -> Result<SegmentationPair> {
    match draw_augmentation(rng, rotate, flip, pair.height() == pair.width()) {
        Some(aug) => apply_augmentation(pair, aug),
        None => Ok(pair.clone()),
    }
}
