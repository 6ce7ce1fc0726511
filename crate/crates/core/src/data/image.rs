use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Fraction of the normalized CAM below which the overlay is blanked.
pub const DEFAULT_CAM_THRESHOLD: f64 = 0.4;

/// Mask colors by class index: black background, then red, green, blue,
/// yellow, magenta, cyan, orange, violet, and eight further hues.
pub const DEFAULT_PALETTE: [[u8; 3]; 17] = [
    [0, 0, 0],
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 255, 0],
    [255, 0, 255],
    [0, 255, 255],
    [255, 128, 0],
    [128, 0, 255],
    [128, 255, 0],
    [0, 128, 255],
    [255, 0, 128],
    [0, 255, 128],
    [128, 128, 128],
    [128, 0, 0],
    [0, 128, 0],
    [0, 0, 128],
];

/// 256-entry blue→red ramp: entry `i` is `(i, 0, 255 − i)`.
pub fn colormap(i: u8) -> [u8; 3] {
    [i, 0, 255 - i]
}

fn level(h: f32) -> u8 {
    (h.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM: `P6\n<w> <h>\n255\n` followed by RGB triples.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    if rgb.len() != width * height * 3 {
        return Err(shape_err("ppm", format!("{} bytes for {width}×{height}", rgb.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    Ok(out)
}

fn dims2(shape: &[usize], what: &'static str) -> Result<(usize, usize)> {
    match *shape {
        [h, w] | [1, h, w] => Ok((h, w)),
        _ => Err(shape_err(what, format!("expected H×W, got {shape:?}"))),
    }
}

pub fn mask_rgb(mask: &Tensor<u8>, palette: &[[u8; 3]]) -> Result<Vec<u8>> {
    dims2(mask.shape(), "mask image")?;
    let mut out = Vec::with_capacity(mask.numel() * 3);
    for &c in mask.data() {
        let color = palette.get(c as usize).ok_or(Error::ClassOutOfRange {
            class: c as usize,
            num_classes: palette.len(),
        })?;
        out.extend_from_slice(color);
    }
    Ok(out)
}

pub fn heatmap_rgb(heatmap: &Tensor<f32>) -> Result<Vec<u8>> {
    dims2(heatmap.shape(), "heatmap")?;
    Ok(heatmap.data().iter().flat_map(|&h| colormap(level(h))).collect())
}

/// Pixels with `heat > threshold` show an even blend of the grayscale image
/// and the colormap; all others are black.
pub fn cam_overlay_rgb(image: &Tensor<f32>, heatmap: &Tensor<f32>, threshold: f64) -> Result<Vec<u8>> {
    let (h, w) = dims2(heatmap.shape(), "cam overlay")?;
    if image.numel() < h * w || image.numel() % (h * w) != 0 {
        return Err(shape_err("cam overlay", format!("image {:?} vs heatmap {h}×{w}", image.shape())));
    }
    let gray = &image.data()[..h * w];
    let mut out = Vec::with_capacity(h * w * 3);
    for (&g, &heat) in gray.iter().zip(heatmap.data()) {
        if (heat as f64) > threshold {
            let g = level(g) as u16;
            for c in colormap(level(heat)) {
                out.push(((g + c as u16) / 2) as u8);
            }
        } else {
            out.extend_from_slice(&[0, 0, 0]);
        }
    }
    Ok(out)
}

pub fn write_mask_image(path: impl AsRef<Path>, mask: &Tensor<u8>, palette: &[[u8; 3]]) -> Result<()> {
    let (h, w) = dims2(mask.shape(), "mask image")?;
    std::fs::write(path, encode_ppm(w, h, &mask_rgb(mask, palette)?)?)?;
    Ok(())
}

pub fn write_heatmap(path: impl AsRef<Path>, heatmap: &Tensor<f32>) -> Result<()> {
    let (h, w) = dims2(heatmap.shape(), "heatmap")?;
    std::fs::write(path, encode_ppm(w, h, &heatmap_rgb(heatmap)?)?)?;
    Ok(())
}

pub fn write_cam_overlay(path: impl AsRef<Path>, image: &Tensor<f32>, heatmap: &Tensor<f32>, threshold: f64) -> Result<()> {
    let (h, w) = dims2(heatmap.shape(), "cam overlay")?;
    std::fs::write(path, encode_ppm(w, h, &cam_overlay_rgb(image, heatmap, threshold)?)?)?;
    Ok(())
}
