//! Optimisation, the adversarial training loop, evaluation and timing.

mod adam;
mod bench;
mod evaluate;
mod trainer;

pub use adam::adam_step;
pub use bench::{bench, BenchReport, BenchRow};
pub use evaluate::{evaluate, evaluate_manifest, Segmenter};
pub use trainer::{FitSummary, LossRecord, TrainState, Trainer};
