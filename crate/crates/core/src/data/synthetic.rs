use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::dataset::SegmentationPair;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shape drawn for a foreground class; class `c` uses family `(c−1) mod 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFamily {
    Disk,
    Square,
    Ring,
}

impl ShapeFamily {
    pub fn for_class(class: usize) -> Self {
        [ShapeFamily::Disk, ShapeFamily::Square, ShapeFamily::Ring][(class - 1) % 3]
    }

    /// Each family is scaled so that its area is `π·r²`.
    fn extent(self, r: f64) -> f64 {
        match self {
            ShapeFamily::Disk => r,
            ShapeFamily::Square => r * (PI / 2.0).sqrt(),
            ShapeFamily::Ring => r * 2.0 / 3f64.sqrt(),
        }
    }

    fn contains(self, dy: f64, dx: f64, r: f64) -> bool {
        let d2 = dy * dy + dx * dx;
        match self {
            ShapeFamily::Disk => d2 <= r * r,
            ShapeFamily::Square => {
                let half = r * PI.sqrt() / 2.0;
                dy.abs() <= half && dx.abs() <= half
            }
            ShapeFamily::Ring => d2 <= r * r * 4.0 / 3.0 && d2 > r * r / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_cases: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Bounds on the equal-area radius of every shape.
    pub r_min: f64,
    pub r_max: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n_cases: usize, size: usize, num_classes: usize, seed: u64) -> Self {
        Self {
            n_cases,
            height: size,
            width: size,
            num_classes,
            r_min: size as f64 / 10.0,
            r_max: size as f64 / 6.0,
            noise_sigma: 0.05,
            seed,
        }
    }

    /// Mean intensity of class `c`: evenly spaced in `[0.15, 0.85]`.
    pub fn intensity(&self, class: usize) -> f32 {
        let span = (self.num_classes - 1).max(1) as f64;
        (0.15 + 0.7 * class as f64 / span) as f32
    }
}

const PLACEMENT_TRIES: usize = 10_000;

/// One non-overlapping instance of every foreground class per case, on a
/// noisy intensity-coded background. Deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SegmentationPair>> {
    let invalid = |m: &str| Err(Error::InvalidArgument(format!("synthetic spec: {m}")));
    if spec.num_classes < 2 || spec.num_classes > 256 {
        return invalid("num_classes must be in 2..=256");
    }
    if !(spec.r_min >= 1.0 && spec.r_min <= spec.r_max) {
        return invalid("need 1 ≤ r_min ≤ r_max");
    }
    if spec.noise_sigma < 0.0 || spec.height == 0 || spec.width == 0 {
        return invalid("noise_sigma and sizes must be positive");
    }
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.height, spec.width);
    (0..spec.n_cases)
        .map(|case| {
            let mut mask = vec![0u8; h * w];
            let mut placed: Vec<(f64, f64, f64)> = Vec::new();
            for class in 1..spec.num_classes {
                let family = ShapeFamily::for_class(class);
                let (r, cy, cx, ext) = (0..PLACEMENT_TRIES)
                    .find_map(|_| {
                        let r = rng.random_range(spec.r_min..=spec.r_max);
                        let ext = family.extent(r);
                        let (lo_y, hi_y) = (ext, h as f64 - 1.0 - ext);
                        let (lo_x, hi_x) = (ext, w as f64 - 1.0 - ext);
                        if lo_y > hi_y || lo_x > hi_x {
                            return None;
                        }
                        let cy = rng.random_range(lo_y..=hi_y);
                        let cx = rng.random_range(lo_x..=hi_x);
                        let clear = placed
                            .iter()
                            .all(|&(py, px, pe)| ((py - cy).powi(2) + (px - cx).powi(2)).sqrt() > pe + ext + 1.0);
                        clear.then_some((r, cy, cx, ext))
                    })
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "synthetic spec: cannot place {} shapes of radius ≤ {} in {h}×{w}",
                            spec.num_classes - 1,
                            spec.r_max
                        ))
                    })?;
                placed.push((cy, cx, ext));
                for (i, m) in mask.iter_mut().enumerate() {
                    if family.contains((i / w) as f64 - cy, (i % w) as f64 - cx, r) {
                        *m = class as u8;
                    }
                }
            }
            let image: Vec<f32> = mask
                .iter()
                .map(|&c| {
                    let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) as f32 } else { 0.0 };
                    (spec.intensity(c as usize) + n).clamp(0.0, 1.0)
                })
                .collect();
            SegmentationPair::new(
                Tensor::from_vec(&[1, h, w], image)?,
                Tensor::from_vec(&[h, w], mask)?,
                format!("case{case:04}"),
            )
        })
        .collect()
}
