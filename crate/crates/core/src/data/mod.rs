//! Tensor files, image output, dataset directories and synthetic data.

pub(crate) mod codec;
mod dataset;
mod image;
mod synthetic;
mod tnsr;

pub use dataset::{load_dataset, save_dataset, split, SegmentationPair, IMAGE_SUFFIX, MASK_SUFFIX};
pub use image::{
    cam_overlay_rgb, colormap, encode_ppm, heatmap_rgb, mask_rgb, write_cam_overlay, write_heatmap, write_mask_image,
    DEFAULT_CAM_THRESHOLD, DEFAULT_PALETTE,
};
pub use synthetic::{generate_synthetic, ShapeFamily, SyntheticSpec};
pub use tnsr::{decode_tensor, encode_tensor, read_tensor, write_tensor, TNSR_MAGIC, TNSR_VERSION};
