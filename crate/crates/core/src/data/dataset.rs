use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::tnsr::{read_tensor, write_tensor};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_SUFFIX: &str = ".img.tnsr";
pub const MASK_SUFFIX: &str = ".msk.tnsr";

/// An image (`C×H×W`, values in `[0,1]`) with its `H×W` label mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationPair {
    pub image: Tensor<f32>,
    pub mask: Tensor<u8>,
    pub case_id: String,
}

impl SegmentationPair {
    pub fn new(image: Tensor<f32>, mask: Tensor<u8>, case_id: impl Into<String>) -> Result<Self> {
        let case_id = case_id.into();
        let image = match image.shape() {
            &[h, w] => image.reshape(&[1, h, w])?,
            _ => image,
        };
        let ok = image.rank() == 3 && mask.rank() == 2 && image.shape()[1..] == *mask.shape();
        if !ok {
            return Err(Error::Dataset(format!(
                "case {case_id}: image {:?} does not match mask {:?}",
                image.shape(),
                mask.shape()
            )));
        }
        Ok(Self { image, mask, case_id })
    }

    pub fn height(&self) -> usize {
        self.mask.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.mask.shape()[1]
    }

    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self.mask.data().iter().find(|&&c| c as usize >= num_classes) {
            Some(&c) => Err(Error::Dataset(format!(
                "case {}: label {c} is outside 0..{num_classes}",
                self.case_id
            ))),
            None => Ok(()),
        }
    }
}

/// Loads every `<id>.img.tnsr` / `<id>.msk.tnsr` pair, ordered by id.
/// Other files are ignored; a half-present pair is an error.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<SegmentationPair>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))?;
    let mut found: BTreeMap<String, (bool, bool)> = BTreeMap::new();
    for entry in entries {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(IMAGE_SUFFIX) {
            found.entry(id.to_string()).or_default().0 = true;
        } else if let Some(id) = name.strip_suffix(MASK_SUFFIX) {
            found.entry(id.to_string()).or_default().1 = true;
        }
    }
    found
        .into_iter()
        .map(|(id, (img, msk))| {
            if !(img && msk) {
                let orphan = if img { IMAGE_SUFFIX } else { MASK_SUFFIX };
                return Err(Error::Dataset(format!(
                    "orphan file {} has no matching {}",
                    dir.join(format!("{id}{orphan}")).display(),
                    if img { MASK_SUFFIX } else { IMAGE_SUFFIX }
                )));
            }
            let image = read_tensor::<f32>(dir.join(format!("{id}{IMAGE_SUFFIX}")))?;
            let mask = read_tensor::<u8>(dir.join(format!("{id}{MASK_SUFFIX}")))?;
            SegmentationPair::new(image, mask, id)
        })
        .collect()
}

pub fn save_dataset(dir: impl AsRef<Path>, pairs: &[SegmentationPair]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for p in pairs {
        write_tensor(dir.join(format!("{}{IMAGE_SUFFIX}", p.case_id)), &p.image)?;
        write_tensor(dir.join(format!("{}{MASK_SUFFIX}", p.case_id)), &p.mask)?;
    }
    Ok(())
}

/// Seeded shuffle, then the first `round(train_fraction·n)` items train.
pub fn split<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidArgument(format!("train fraction {train_fraction} not in [0,1]")));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (train_fraction * items.len() as f64).round() as usize;
    let pick = |ix: &[usize]| ix.iter().map(|&i| items[i].clone()).collect();
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}
