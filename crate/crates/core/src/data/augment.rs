use rand::seq::SliceRandom;
use rand::Rng;

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const CLAHE_CLIP: f64 = 2.0;
pub const CLAHE_TILES: usize = 8;
pub const GAMMA_CHOICES: [f64; 3] = [0.7, 1.0, 1.5];

const BINS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AugmentOp {
    HFlip,
    VFlip,
    /// `v → v^g` on the image.
    Gamma(f64),
    /// Contrast-limited adaptive histogram equalisation of the image luminance.
    Clahe { clip: f64, tiles: usize },
}

impl std::fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AugmentOp::HFlip => write!(f, "hflip"),
            AugmentOp::VFlip => write!(f, "vflip"),
            AugmentOp::Gamma(g) => write!(f, "gamma({g})"),
            AugmentOp::Clahe { clip, tiles } => write!(f, "clahe({clip},{tiles})"),
        }
    }
}

/// Mirror every plane left to right.
pub fn hflip(t: &Tensor) -> Tensor {
    let s = t.shape();
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(s.w.max(1)) {
        row.reverse();
    }
    out
}

/// Mirror every plane top to bottom.
pub fn vflip(t: &Tensor) -> Tensor {
    let s = t.shape();
    let mut out = Vec::with_capacity(t.len());
    for plane in t.data().chunks(s.plane().max(1)) {
        for row in plane.chunks(s.w.max(1)).rev() {
            out.extend_from_slice(row);
        }
    }
    Tensor::new(s, out).expect("same length")
}

pub fn gamma(t: &Tensor, g: f64) -> Result<Tensor> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::config(format!("gamma {g} must be positive")));
    }
    Ok(t.map(|v| (v as f64).powf(g) as Real))
}

/// Per-tile clipped-histogram lookup table mapping a bin to a value in `[0, 1]`.
fn tile_lut(values: impl Iterator<Item = usize>, count: usize, clip: f64) -> Vec<f64> {
    let mut hist = [0.0f64; BINS];
    for b in values {
        hist[b] += 1.0;
    }
    let limit = (clip * count as f64 / BINS as f64).max(1.0);
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let share = excess / BINS as f64;
    let mut cdf = 0.0;
    hist.iter()
        .map(|h| {
            cdf += h + share;
            cdf / count as f64
        })
        .collect()
}

/// Interpolation weights between tile centres along one axis: `(lo, hi, frac)` per pixel.
fn tile_taps(len: usize, tiles: usize) -> Vec<(usize, usize, f64)> {
    let size = len as f64 / tiles as f64;
    (0..len)
        .map(|i| {
            let pos = (i as f64 + 0.5) / size - 0.5;
            if pos <= 0.0 {
                (0, 0, 0.0)
            } else if pos >= (tiles - 1) as f64 {
                (tiles - 1, tiles - 1, 0.0)
            } else {
                let lo = pos.floor() as usize;
                (lo, lo + 1, pos - lo as f64)
            }
        })
        .collect()
}

/// CLAHE on the luminance of each RGB image in a `(n, 3, h, w)` batch; chrominance
/// (`Cb`, `Cr`) is preserved.
pub fn clahe(image: &Tensor, clip: f64, tiles: usize) -> Result<Tensor> {
    if !(clip >= 1.0) {
        return Err(Error::config(format!("CLAHE clip limit {clip} must be at least 1")));
    }
    if tiles == 0 {
        return Err(Error::config("CLAHE needs at least one tile"));
    }
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::dim("channel", format!("CLAHE needs RGB input, got {s}")));
    }
    let (h, w) = (s.h, s.w);
    let (ty, tx) = (tiles.min(h).max(1), tiles.min(w).max(1));
    let bounds = |len: usize, t: usize| (0..=t).map(|i| i * len / t).collect::<Vec<_>>();
    let (by, bx) = (bounds(h, ty), bounds(w, tx));
    let (tap_y, tap_x) = (tile_taps(h, ty), tile_taps(w, tx));
    let mut out = image.clone();
    let plane = s.plane();
    for n in 0..s.n {
        let base = n * s.item();
        let d = image.data();
        let (r, g, b) = (
            &d[base..base + plane],
            &d[base + plane..base + 2 * plane],
            &d[base + 2 * plane..base + 3 * plane],
        );
        let luma: Vec<f64> = (0..plane)
            .map(|i| 0.299 * r[i] as f64 + 0.587 * g[i] as f64 + 0.114 * b[i] as f64)
            .collect();
        let bin = |v: f64| ((v.clamp(0.0, 1.0) * 255.0).round() as usize).min(BINS - 1);
        let luts: Vec<Vec<f64>> = (0..ty * tx)
            .map(|t| {
                let (y0, y1, x0, x1) = (by[t / tx], by[t / tx + 1], bx[t % tx], bx[t % tx + 1]);
                let px = (y0..y1).flat_map(|y| (x0..x1).map(move |x| y * w + x));
                tile_lut(px.map(|i| bin(luma[i])), (y1 - y0) * (x1 - x0), clip)
            })
            .collect();
        let o = out.data_mut();
        for y in 0..h {
            let (ylo, yhi, fy) = tap_y[y];
            for x in 0..w {
                let (xlo, xhi, fx) = tap_x[x];
                let i = y * w + x;
                let k = bin(luma[i]);
                let at = |ty_: usize, tx_: usize| luts[ty_ * tx + tx_][k];
                let top = at(ylo, xlo) * (1.0 - fx) + at(ylo, xhi) * fx;
                let bottom = at(yhi, xlo) * (1.0 - fx) + at(yhi, xhi) * fx;
                let y_new = top * (1.0 - fy) + bottom * fy;
                let (rv, bv) = (r[i] as f64, b[i] as f64);
                let cb = (bv - luma[i]) / 1.772;
                let cr = (rv - luma[i]) / 1.402;
                let r2 = y_new + 1.402 * cr;
                let b2 = y_new + 1.772 * cb;
                let g2 = (y_new - 0.299 * r2 - 0.114 * b2) / 0.587;
                o[base + i] = r2.clamp(0.0, 1.0) as Real;
                o[base + plane + i] = g2.clamp(0.0, 1.0) as Real;
                o[base + 2 * plane + i] = b2.clamp(0.0, 1.0) as Real;
            }
        }
    }
    Ok(out)
}

/// Apply `ops` in order. Flips act on image and mask together; photometric ops touch the
/// image only.
pub fn augment(s: &Sample, ops: &[AugmentOp]) -> Result<Sample> {
    let mut out = s.clone();
    for op in ops {
        match *op {
            AugmentOp::HFlip => {
                out.image = hflip(&out.image);
                out.mask = hflip(&out.mask);
            }
            AugmentOp::VFlip => {
                out.image = vflip(&out.image);
                out.mask = vflip(&out.mask);
            }
            AugmentOp::Gamma(g) => out.image = gamma(&out.image, g)?,
            AugmentOp::Clahe { clip, tiles } => out.image = clahe(&out.image, clip, tiles)?,
        }
    }
    Ok(out)
}

/// Eight copies per sample: {identity, hflip, vflip, both} × {gamma, CLAHE}, with gamma drawn
/// from [`GAMMA_CHOICES`]. Returns the copies and an `(id, recipe)` record for each.
pub fn expand_eightfold<R: Rng + ?Sized>(
    samples: &[Sample],
    rng: &mut R,
) -> Result<(Vec<Sample>, Vec<(String, String)>)> {
    let geometric: [&[AugmentOp]; 4] = [
        &[],
        &[AugmentOp::HFlip],
        &[AugmentOp::VFlip],
        &[AugmentOp::HFlip, AugmentOp::VFlip],
    ];
    let mut out = Vec::with_capacity(samples.len() * 8);
    let mut recipes = Vec::with_capacity(samples.len() * 8);
    for s in samples {
        let mut k = 0;
        for geo in geometric {
            for photometric in 0..2 {
                let mut ops = geo.to_vec();
                ops.push(if photometric == 0 {
                    AugmentOp::Gamma(*GAMMA_CHOICES.choose(rng).expect("non-empty"))
                } else {
                    AugmentOp::Clahe {
                        clip: CLAHE_CLIP,
                        tiles: CLAHE_TILES,
                    }
                });
                let mut copy = augment(s, &ops)?;
                copy.id = format!("{}_aug{k}", s.id);
                let recipe = ops.iter().map(ToString::to_string).collect::<Vec<_>>().join("+");
                recipes.push((copy.id.clone(), recipe));
                out.push(copy);
                k += 1;
            }
        }
    }
    Ok((out, recipes))
}
