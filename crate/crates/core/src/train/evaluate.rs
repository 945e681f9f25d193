use crate::data::{DatasetManifest, Sample};
use crate::error::Result;
use crate::metrics::{confusion, Aggregation, MetricsReport};
use crate::networks::{binarize, Generator};
use crate::tensor::{Real, Tensor};

/// Anything mapping a batch of images `(n, 3, s, s)` to soft masks `(n, 1, s, s)`.
pub trait Segmenter {
    fn segment(&self, images: &Tensor) -> Result<Tensor>;
}

impl Segmenter for Generator {
    fn segment(&self, images: &Tensor) -> Result<Tensor> {
        self.predict(images)
    }
}

const EVAL_BATCH: usize = 8;

/// Binarise predictions at `threshold` and score them against each sample's mask.
pub fn evaluate<S: Segmenter + ?Sized>(
    seg: &S,
    samples: &[Sample],
    threshold: Real,
    aggregation: Aggregation,
) -> Result<MetricsReport> {
    let mut counts = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let images: Vec<&Tensor> = chunk.iter().map(|s| &s.image).collect();
        let pred = binarize(&seg.segment(&Tensor::stack(&images)?)?, threshold);
        for (i, s) in chunk.iter().enumerate() {
            counts.push((s.id.clone(), confusion(&s.mask, &pred.batch_item(i))?));
        }
    }
    MetricsReport::from_counts(&counts, aggregation)
}

/// Load every labelled entry of `manifest` and evaluate; a missing mask is a usage error.
pub fn evaluate_manifest<S: Segmenter + ?Sized>(
    seg: &S,
    manifest: &DatasetManifest,
    aggregation: Aggregation,
) -> Result<MetricsReport> {
    evaluate(seg, &manifest.load_samples()?, 0.5, aggregation)
}
