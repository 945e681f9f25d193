//! Generator, discriminator and parameter accounting.

mod count;
mod discriminator;
mod generator;

pub use count::{count_parameters, count_parameters_for_config, ParamBreakdown};
pub use discriminator::Discriminator;
pub use generator::{DownLayer, Generator, MultiscaleBlock, UpLayer};

use crate::tensor::{Real, Tensor};

/// Hard mask: `1` where `mask ≥ threshold`, else `0`.
pub fn binarize(mask: &Tensor, threshold: Real) -> Tensor {
    mask.map(|v| if v >= threshold { 1.0 } else { 0.0 })
}
