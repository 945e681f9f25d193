//! Differentiable tensor operations.
//!
//! Every function takes `Var`s, checks shapes, computes the forward value and records a
//! gradient rule when any input requires grad. Batch items are processed independently and
//! may run on the rayon pool; cross-item reductions always sum in batch order so results do
//! not depend on the thread count.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod spatial;

pub use conv::{conv2d, conv2d_with, conv_transpose2d, ConvSpec};
pub use elementwise::{
    add, concat_channels, dropout, leaky_relu, mean, mul, relu, reshape, scale, scale_by,
    sigmoid, sub, sum,
};
pub use linalg::{matmul, softmax_rows, transpose};
pub use norm::{batch_norm_eval, batch_norm_train, BatchStats};
pub use spatial::{bilinear_resize, bilinear_resize_tensor, bilinear_upsample, maxpool2};

use rayon::prelude::*;

/// Map `f` over batch indices, in parallel when the pool has more than one thread. Output
/// order always matches index order.
pub(crate) fn per_item<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if n > 1 && rayon::current_num_threads() > 1 {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}
