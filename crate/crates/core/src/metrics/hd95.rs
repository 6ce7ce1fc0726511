use crate::error::{Error, Result};
use crate::metrics::check_masks;
use crate::par;
use crate::tensor::Tensor;

/// Squared distance reported where no site exists.
pub const EDT_INF: i64 = i64::MAX;

/// Foreground pixels of `class` with a 4-neighbour outside the class.
/// Pixels beyond the image border count as background.
pub fn boundary(mask: &Tensor<u8>, class: u8) -> Vec<bool> {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let m = mask.data();
    let fg = |y: isize, x: isize| {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && m[y as usize * w + x as usize] == class
    };
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            fg(y, x) && !(fg(y - 1, x) && fg(y + 1, x) && fg(y, x - 1) && fg(y, x + 1))
        })
        .collect()
}

/// One-dimensional lower envelope of parabolas `(q − p)² + f[p]`,
/// skipping sites at [`EDT_INF`].
fn edt_1d(f: &mut [i64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for q in 0..f.len() {
        if f[q] == EDT_INF {
            continue;
        }
        let fq = f[q] + (q * q) as i64;
        loop {
            let Some(&p) = v.last() else { break };
            let s = (fq - (f[p] + (p * p) as i64)) as f64 / (2 * (q - p)) as f64;
            if s <= z[z.len() - 1] {
                v.pop();
                z.pop();
            } else {
                z.push(s);
                break;
            }
        }
        if v.is_empty() {
            z.push(f64::NEG_INFINITY);
        }
        v.push(q);
    }
    if v.is_empty() {
        return;
    }
    let sites: Vec<i64> = v.iter().map(|&p| f[p]).collect();
    let mut k = 0;
    for (q, out) in f.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as i64 - v[k] as i64;
        *out = d * d + sites[k];
    }
}

fn transpose(src: &[i64], h: usize, w: usize) -> Vec<i64> {
    let mut out = vec![0; h * w];
    par::for_each_chunk(&mut out, h, |x, col| {
        for (y, o) in col.iter_mut().enumerate() {
            *o = src[y * w + x];
        }
    });
    out
}

/// Exact squared Euclidean distance from every pixel to the nearest site.
/// All entries are [`EDT_INF`] when there are no sites.
pub fn squared_edt(sites: &[bool], h: usize, w: usize) -> Vec<i64> {
    let mut g: Vec<i64> = sites.iter().map(|&s| if s { 0 } else { EDT_INF }).collect();
    let rows = |buf: &mut [i64], len: usize| {
        par::for_each_chunk(buf, len, |_, row| edt_1d(row, &mut Vec::new(), &mut Vec::new()));
    };
    rows(&mut g, w);
    let mut t = transpose(&g, h, w);
    rows(&mut t, h);
    transpose(&t, w, h)
}

/// Linear interpolation between order statistics at rank `q·(n−1)`.
/// `sorted` must be ascending and nonempty.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// 95th percentile of the pooled boundary-to-nearest-boundary distances in
/// both directions. Fails with [`Error::EmptyMask`] when either side has no
/// pixel of `class`.
pub fn hd95(pred: &Tensor<u8>, reference: &Tensor<u8>, class: u8, spacing: f64) -> Result<f64> {
    let (h, w) = check_masks(pred, reference)?;
    let bp = boundary(pred, class);
    let br = boundary(reference, class);
    if !bp.contains(&true) || !br.contains(&true) {
        return Err(Error::EmptyMask);
    }
    let dp = squared_edt(&bp, h, w);
    let dr = squared_edt(&br, h, w);
    let mut dists: Vec<f64> = bp
        .iter()
        .zip(&dr)
        .chain(br.iter().zip(&dp))
        .filter(|(&on, _)| on)
        .map(|(_, &d2)| (d2 as f64).sqrt() * spacing)
        .collect();
    dists.sort_by(f64::total_cmp);
    Ok(percentile(&dists, 0.95))
}
