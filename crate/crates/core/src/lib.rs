//! Lightweight adversarial skin-lesion segmentation: a small reverse-mode autodiff tensor
//! library, dual-attention generator and discriminator, losses, metrics, data pipeline and
//! training loop.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod fcm;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod tensor;
pub mod train;

pub use config::{LossWeights, ModelConfig, OptimizerConfig, TrainConfig};
pub use error::{Error, Result};
pub use tensor::{Real, Shape, Tensor, Var};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "LESION_GAN_THREADS";

/// Size the global worker pool: `threads` if given, else [`THREADS_ENV`], else one worker
/// per core. Results do not depend on the count. Returns the count in effect.
pub fn configure_threads(threads: Option<usize>) -> Result<usize> {
    let requested = match threads {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| {
                Error::Usage(format!("{THREADS_ENV}={v:?} is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    if requested == Some(0) {
        return Err(Error::Usage("thread count must be at least 1".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = requested {
        builder = builder.num_threads(n);
    }
    // A pool that already exists (e.g. in tests) is left as is.
    let _ = builder.build_global();
    Ok(rayon::current_num_threads())
}
