use rand::seq::SliceRandom;
use rand::Rng;

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Iterator over `(images, masks)` batches; the last batch may be smaller.
#[derive(Debug)]
pub struct BatchIter<'a> {
    samples: &'a [Sample],
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl BatchIter<'_> {
    /// Sample indices in delivery order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for BatchIter<'_> {
    type Item = (Tensor, Tensor);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let picked: Vec<&Sample> = self.order[self.pos..end].iter().map(|&i| &self.samples[i]).collect();
        self.pos = end;
        let images: Vec<&Tensor> = picked.iter().map(|s| &s.image).collect();
        let masks: Vec<&Tensor> = picked.iter().map(|s| &s.mask).collect();
        Some((
            Tensor::stack(&images).expect("samples share extents"),
            Tensor::stack(&masks).expect("samples share extents"),
        ))
    }
}

/// Batch `samples` in order, or in an order shuffled by `rng`.
pub fn batch<'a, R: Rng + ?Sized>(
    samples: &'a [Sample],
    batch_size: usize,
    shuffle: Option<&mut R>,
) -> Result<BatchIter<'a>> {
    if samples.is_empty() {
        return Err(Error::Usage("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let first = (samples[0].image.shape(), samples[0].mask.shape());
    if let Some(s) = samples.iter().find(|s| (s.image.shape(), s.mask.shape()) != first) {
        return Err(Error::dim("height", format!("sample {} has different extents", s.id)));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    if let Some(rng) = shuffle {
        order.shuffle(rng);
    }
    Ok(BatchIter {
        samples,
        order,
        batch_size,
        pos: 0,
    })
}
