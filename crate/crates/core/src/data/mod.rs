//! Loading, augmentation, synthetic data and batching.

mod augment;
mod batch;
mod image_io;
mod manifest;
mod synth;

pub use augment::{
    augment, clahe, expand_eightfold, gamma, hflip, vflip, AugmentOp, CLAHE_CLIP, CLAHE_TILES,
    GAMMA_CHOICES,
};
pub use batch::{batch, BatchIter};
pub use image_io::{image_dimensions, load_image, load_mask, load_sample, save_image_png, save_mask_png};
pub use manifest::{save_samples, DatasetManifest, ManifestEntry, Split};
pub use synth::{synthesize_disk_dataset, synthesize_with_layout, Ellipse};

use crate::tensor::Tensor;

/// An RGB image in `[0, 1]` with its binary mask, both `(1, c, s, s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub mask: Tensor,
}
