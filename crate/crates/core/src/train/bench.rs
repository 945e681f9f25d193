use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::networks::Generator;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub input_size: usize,
    pub mean_ms: f64,
    pub fps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub warmup_iters: usize,
    pub timed_iters: usize,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>6} {:>12} {:>10}", "size", "mean_ms", "fps")?;
        for r in &self.rows {
            writeln!(f, "{:>6} {:>12.3} {:>10.3}", r.input_size, r.mean_ms, r.fps)?;
        }
        write!(f, "warmup {} / timed {}", self.warmup_iters, self.timed_iters)
    }
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("input_size,mean_ms,fps\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.input_size, r.mean_ms, r.fps));
        }
        s
    }
}

/// Single-image inference timing at each size, on a pool of `threads` workers.
pub fn bench(
    gen: &Generator,
    sizes: &[usize],
    warmup: usize,
    iters: usize,
    threads: usize,
) -> Result<BenchReport> {
    if iters == 0 {
        return Err(Error::Usage("bench needs at least one timed iteration".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("cannot build thread pool: {e}")))?;
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let rows = pool.install(|| {
        sizes
            .iter()
            .map(|&size| {
                let g = gen.with_input_size(size)?;
                let x = Tensor::from_fn(Shape::new(1, 3, size, size), |_, c, h, w| {
                    ((c * 7 + h * 3 + w) % 11) as crate::tensor::Real / 10.0
                });
                for _ in 0..warmup {
                    g.predict(&x)?;
                }
                let start = Instant::now();
                for _ in 0..iters {
                    g.predict(&x)?;
                }
                let mean_ms = start.elapsed().as_secs_f64() * 1e3 / iters as f64;
                Ok(BenchRow {
                    input_size: size,
                    mean_ms,
                    fps: 1e3 / mean_ms,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(BenchReport {
        rows,
        warmup_iters: warmup,
        timed_iters: iters,
    })
}
