use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// A rotated ellipse in pixel coordinates; pixel `(x, y)` is sampled at its centre
/// `(x + 0.5, y + 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axis along the rotated x direction.
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl Ellipse {
    /// Normalised radius: `≤ 1` inside the ellipse.
    pub fn radius(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (sin, cos) = self.theta.sin_cos();
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }

    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        self.radius(x as f64 + 0.5, y as f64 + 0.5) <= 1.0
    }
}

const SKIN: [f64; 3] = [0.86, 0.68, 0.58];
const LESION: [f64; 3] = [0.42, 0.26, 0.18];

fn jitter(base: [f64; 3], amount: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    base.map(|v| v + rng.gen_range(-amount..amount))
}

fn one_sample(id: String, size: usize, rng: &mut ChaCha8Rng) -> (Sample, Vec<Ellipse>) {
    let count = rng.gen_range(1..=2);
    let lesions: Vec<Ellipse> = (0..count)
        .map(|_| {
            let s = size as f64;
            let a = rng.gen_range(0.15..0.30) * s;
            let b = rng.gen_range(0.15..0.30) * s;
            let reach = a.max(b) + 1.0;
            Ellipse {
                cx: rng.gen_range(reach..s - reach),
                cy: rng.gen_range(reach..s - reach),
                a,
                b,
                theta: rng.gen_range(0.0..std::f64::consts::PI),
            }
        })
        .collect();
    let skin = jitter(SKIN, 0.06, rng);
    let colours: Vec<[f64; 3]> = lesions.iter().map(|_| jitter(LESION, 0.08, rng)).collect();
    let noise = Normal::new(0.0, 0.03).expect("valid sigma");

    let mut image = Tensor::zeros(Shape::new(1, 3, size, size));
    let mut mask = Tensor::zeros(Shape::new(1, 1, size, size));
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut rgb = skin;
            let mut inside = false;
            for (e, col) in lesions.iter().zip(&colours) {
                let r = e.radius(px, py);
                inside |= r <= 1.0;
                // soft edge about two pixels wide, crossing one half on the boundary
                let alpha = (0.5 + (1.0 - r) * e.a.min(e.b) / 2.0).clamp(0.0, 1.0);
                for c in 0..3 {
                    rgb[c] = rgb[c] * (1.0 - alpha) + col[c] * alpha;
                }
            }
            for (c, v) in rgb.iter().enumerate() {
                let noisy = (v + noise.sample(rng)).clamp(0.0, 1.0);
                image.set(0, c, y, x, noisy as Real);
            }
            mask.set(0, 0, y, x, if inside { 1.0 } else { 0.0 });
        }
    }
    (Sample { id, image, mask }, lesions)
}

/// Samples together with the ellipses drawn into each.
pub fn synthesize_with_layout(
    n: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<(Sample, Vec<Ellipse>)>> {
    if n == 0 {
        return Err(Error::config("synthetic dataset needs at least one sample"));
    }
    if size < 16 {
        return Err(Error::config(format!("synthetic image size {size} is below 16")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|i| one_sample(format!("synth_{i:04}"), size, &mut rng))
        .collect())
}

/// Noisy skin-toned backgrounds with one or two soft-edged elliptical lesions; the mask is
/// the exact union of the ellipses. A pure function of `(n, size, seed)`.
pub fn synthesize_disk_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    Ok(synthesize_with_layout(n, size, seed)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}
