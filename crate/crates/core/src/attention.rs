//! Channel attention (CAM) and position attention (PAM).
//!
//! CAM re-weights channels with a softmax over the channel Gram matrix:
//! `x_ji = softmax_i(A_i · A_j)`, `E_j = γ Σ_i x_ji A_i + A_j`.
//!
//! PAM re-weights positions: `s_ji = softmax_i(B_i · C_j)`, `E_j = η Σ_i s_ji D_i + A_j`,
//! where `B`, `C`, `D` come from 1×1 conv + batch norm + ReLU branches. Both scales start at
//! zero, so each module is the identity at initialisation.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Buffer, Conv2d, Mode, Module, Parameter};
use crate::tensor::kernels::{axpy, dot};
use crate::tensor::ops::{self, per_item, ConvSpec};
use crate::tensor::{is_grad_enabled, no_grad, Real, Shape, Tensor, Var};

fn check_input(op: &str, a: &Var) -> Result<()> {
    let s = a.shape();
    if s.c == 0 {
        return Err(Error::dim("channel", format!("{op} needs at least one channel")));
    }
    if s.plane() == 0 {
        return Err(Error::dim("height", format!("{op} needs at least one position")));
    }
    Ok(())
}

/// Channel attention with a learned residual scale `gamma`.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub gamma: Parameter,
}

impl ChannelAttention {
    pub fn new(name: &str) -> Self {
        ChannelAttention {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::scalar(0.0)),
        }
    }

    pub fn forward(&self, a: &Var) -> Result<Var> {
        check_input("channel attention", a)?;
        let s = a.shape();
        let flat = ops::reshape(a, Shape::new(s.n, 1, s.c, s.plane()))?;
        let gram = ops::matmul(&flat, &ops::transpose(&flat)?)?;
        let attn = ops::softmax_rows(&gram).map_err(|e| match e {
            Error::Numeric { detail, .. } => Error::numeric("channel attention logits", detail),
            other => other,
        })?;
        let mixed = ops::matmul(&attn, &flat)?;
        let scaled = ops::scale_by(&mixed, self.gamma.var())?;
        let out = ops::add(&scaled, &flat)?;
        ops::reshape(&out, s)
    }

    /// The `(n, 1, c, c)` attention map `x_ji` (row `j`, column `i`).
    pub fn attention_map(&self, a: &Tensor) -> Result<Tensor> {
        no_grad(|| {
            let a = Var::constant(a.clone());
            check_input("channel attention", &a)?;
            let s = a.shape();
            let flat = ops::reshape(&a, Shape::new(s.n, 1, s.c, s.plane()))?;
            let gram = ops::matmul(&flat, &ops::transpose(&flat)?)?;
            Ok(ops::softmax_rows(&gram)?.value().clone())
        })
    }
}

impl Module for ChannelAttention {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.gamma);
    }
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter)) {
        f(&mut self.gamma);
    }
}

/// One `conv 1×1 → batch norm → ReLU` branch of position attention.
#[derive(Clone, Debug)]
pub struct Projection {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl Projection {
    fn new(name: &str, channels: usize, rng: &mut dyn RngCore) -> Self {
        Projection {
            conv: Conv2d::new(
                &format!("{name}.conv"),
                channels,
                channels,
                (1, 1),
                ConvSpec::new(1, 0),
                rng,
            ),
            bn: BatchNorm2d::new(&format!("{name}.bn"), channels),
        }
    }

    pub fn forward(&self, a: &Var, training: bool) -> Result<Var> {
        ops::relu(&self.bn.forward(&self.conv.forward(a)?, training)?)
    }
}

impl Module for Projection {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.conv.visit_params(f);
        self.bn.visit_params(f);
    }
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter)) {
        self.conv.visit_params_mut(f);
        self.bn.visit_params_mut(f);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Buffer)) {
        self.bn.visit_buffers(f);
    }
}

/// Position attention with query/key/value branches and a learned residual scale `eta`.
#[derive(Clone, Debug)]
pub struct PositionAttention {
    pub eta: Parameter,
    pub branch_b: Projection,
    pub branch_c: Projection,
    pub branch_d: Projection,
}

impl PositionAttention {
    pub fn new(name: &str, channels: usize, rng: &mut dyn RngCore) -> Self {
        PositionAttention {
            eta: Parameter::new(format!("{name}.eta"), Tensor::scalar(0.0)),
            branch_b: Projection::new(&format!("{name}.conv_b"), channels, rng),
            branch_c: Projection::new(&format!("{name}.conv_c"), channels, rng),
            branch_d: Projection::new(&format!("{name}.conv_d"), channels, rng),
        }
    }

    pub fn forward(&self, a: &Var, mode: &mut Mode<'_>) -> Result<Var> {
        check_input("position attention", a)?;
        let training = mode.is_training();
        let b = self.branch_b.forward(a, training)?;
        let c = self.branch_c.forward(a, training)?;
        let d = self.branch_d.forward(a, training)?;
        position_attend(a, &b, &c, &d, self.eta.var())
    }

    /// The `(n, 1, N, N)` attention map `s_ji` for `N = h·w`, computed in eval mode.
    pub fn attention_map(&self, a: &Tensor) -> Result<Tensor> {
        no_grad(|| {
            let a = Var::constant(a.clone());
            check_input("position attention", &a)?;
            let b = self.branch_b.forward(&a, false)?;
            let c = self.branch_c.forward(&a, false)?;
            let s = a.shape();
            let n_pos = s.plane();
            let mut out = Vec::with_capacity(s.n * n_pos * n_pos);
            let mut row = vec![0.0; n_pos];
            for item in 0..s.n {
                let bi = &b.data()[item * s.item()..(item + 1) * s.item()];
                let ci = &c.data()[item * s.item()..(item + 1) * s.item()];
                for j in 0..n_pos {
                    attention_row(bi, ci, s.c, n_pos, j, &mut row)?;
                    out.extend_from_slice(&row);
                }
            }
            Tensor::new(Shape::new(s.n, 1, n_pos, n_pos), out)
        })
    }
}

impl Module for PositionAttention {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.eta);
        self.branch_b.visit_params(f);
        self.branch_c.visit_params(f);
        self.branch_d.visit_params(f);
    }
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Parameter)) {
        f(&mut self.eta);
        self.branch_b.visit_params_mut(f);
        self.branch_c.visit_params_mut(f);
        self.branch_d.visit_params_mut(f);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Buffer)) {
        self.branch_b.visit_buffers(f);
        self.branch_c.visit_buffers(f);
        self.branch_d.visit_buffers(f);
    }
}

/// Unnormalised row `j` of the position attention map, `exp(l_i − max l)` with logits
/// `l_i = Σ_c B[c][i]·C[c][j]`; returns the normaliser. `b` and `c` are one batch item laid
/// out `(channels, n_pos)`.
fn attention_row_unnormalised(
    b: &[Real],
    c: &[Real],
    channels: usize,
    n_pos: usize,
    j: usize,
    row: &mut [Real],
) -> Result<f64> {
    row.fill(0.0);
    for ch in 0..channels {
        axpy(c[ch * n_pos + j], &b[ch * n_pos..(ch + 1) * n_pos], row);
    }
    let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let mut total = 0.0f64;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v as f64;
    }
    if !(max.is_finite() && total.is_finite()) {
        return Err(Error::numeric(
            "position attention logits",
            format!("non-finite affinity in row {j}"),
        ));
    }
    Ok(total)
}

/// Row `j` of the position attention map: `softmax_i(Σ_c B[c][i]·C[c][j])`.
fn attention_row(
    b: &[Real],
    c: &[Real],
    channels: usize,
    n_pos: usize,
    j: usize,
    row: &mut [Real],
) -> Result<()> {
    let inv = (1.0 / attention_row_unnormalised(b, c, channels, n_pos, j, row)?) as Real;
    row.iter_mut().for_each(|v| *v *= inv);
    Ok(())
}

/// Largest batch of `N × N` maps (in entries) kept for the backward pass; bigger ones are
/// recomputed row by row.
const CACHED_MAP_LIMIT: usize = 1 << 24;

/// `A + η · (D · Sᵀ)` with `S` the row-softmaxed position affinity of `B` and `C`.
///
/// The `N × N` map is streamed one row at a time. Small maps are kept for the backward
/// pass; larger ones are recomputed there, so memory stays linear in the number of
/// positions.
pub fn position_attend(a: &Var, b: &Var, c: &Var, d: &Var, eta: &Var) -> Result<Var> {
    position_attend_with_limit(a, b, c, d, eta, CACHED_MAP_LIMIT)
}

fn position_attend_with_limit(
    a: &Var,
    b: &Var,
    c: &Var,
    d: &Var,
    eta: &Var,
    cache_limit: usize,
) -> Result<Var> {
    let s = a.shape();
    for (name, t) in [("query", b), ("key", c), ("value", d)] {
        if t.shape() != s {
            return Err(Error::dim(
                "channel",
                format!("position attention {name} branch has shape {}, input {s}", t.shape()),
            ));
        }
    }
    if eta.shape().numel() != 1 {
        return Err(Error::dim("data", "position attention scale must hold one value"));
    }
    let (channels, n_pos, item) = (s.c, s.plane(), s.item());
    let eta_v = eta.data()[0];
    let (ad, bd, cd, dd) = (a.data(), b.data(), c.data(), d.data());

    let keep = is_grad_enabled() && s.n * n_pos * n_pos <= cache_limit;
    let items = per_item(s.n, |n| -> Result<(Vec<Real>, Vec<Real>)> {
        let range = n * item..(n + 1) * item;
        let (bi, ci, di) = (&bd[range.clone()], &cd[range.clone()], &dd[range.clone()]);
        let mut out = ad[range].to_vec();
        let mut map = vec![0.0; if keep { n_pos * n_pos } else { 0 }];
        let mut row = vec![0.0; n_pos];
        for j in 0..n_pos {
            let total = attention_row_unnormalised(bi, ci, channels, n_pos, j, &mut row)?;
            let inv = 1.0 / total;
            for ch in 0..channels {
                let mixed = (dot(&di[ch * n_pos..(ch + 1) * n_pos], &row) * inv) as Real;
                out[ch * n_pos + j] += eta_v * mixed;
            }
            if keep {
                let inv = inv as Real;
                for (m, &v) in map[j * n_pos..(j + 1) * n_pos].iter_mut().zip(&row) {
                    *m = v * inv;
                }
            }
        }
        Ok((out, map))
    });
    let mut data = Vec::with_capacity(s.numel());
    let mut maps = Vec::with_capacity(s.n);
    for r in items {
        let (out, map) = r?;
        data.extend(out);
        maps.push(map);
    }
    let value = Tensor::new(s, data)?;

    Var::from_op(
        "position_attend",
        value,
        vec![a.clone(), b.clone(), c.clone(), d.clone(), eta.clone()],
        move |g: &[Real], p: &[Var]| {
            let (bd, cd, dd) = (p[1].data(), p[2].data(), p[3].data());
            let eta_v = p[4].data()[0];
            let need_bcd = eta_v != 0.0
                && (p[1].requires_grad() || p[2].requires_grad() || p[3].requires_grad());
            let per = per_item(s.n, |n| {
                let range = n * item..(n + 1) * item;
                let (bi, ci, di) = (&bd[range.clone()], &cd[range.clone()], &dd[range.clone()]);
                let gi = &g[range];
                let mut d_eta = 0.0f64;
                let mut db = vec![0.0; if need_bcd { item } else { 0 }];
                let mut dc = vec![0.0; if need_bcd { item } else { 0 }];
                let mut dd_ = vec![0.0; if need_bcd { item } else { 0 }];
                let mut row_buf = vec![0.0; if keep { 0 } else { n_pos }];
                let mut ds = vec![0.0; n_pos];
                let mut go = vec![0.0; channels];
                for j in 0..n_pos {
                    let row: &[Real] = if keep {
                        &maps[n][j * n_pos..(j + 1) * n_pos]
                    } else {
                        attention_row(bi, ci, channels, n_pos, j, &mut row_buf)
                            .expect("finite in forward, finite in backward");
                        &row_buf
                    };
                    for ch in 0..channels {
                            let mixed = dot(&di[ch * n_pos..(ch + 1) * n_pos], row);
                        d_eta += gi[ch * n_pos + j] as f64 * mixed;
                        go[ch] = eta_v * gi[ch * n_pos + j];
                    }
                    if !need_bcd {
                        continue;
                    }
                    // d out_j / d s_ji = Σ_c go[c]·D[c][i]
                    ds.fill(0.0);
                    for ch in 0..channels {
                        axpy(go[ch], &di[ch * n_pos..(ch + 1) * n_pos], &mut ds);
                        axpy(go[ch], row, &mut dd_[ch * n_pos..(ch + 1) * n_pos]);
                    }
                    let inner = dot(row, &ds) as Real;
                    // reuse ds as the logit gradient
                    for (dsi, &si) in ds.iter_mut().zip(row.iter()) {
                        *dsi = si * (*dsi - inner);
                    }
                    for ch in 0..channels {
                        let b_row = &bi[ch * n_pos..(ch + 1) * n_pos];
                        dc[ch * n_pos + j] += dot(&ds, b_row) as Real;
                        axpy(ci[ch * n_pos + j], &ds, &mut db[ch * n_pos..(ch + 1) * n_pos]);
                    }
                }
                (d_eta, db, dc, dd_)
            });
            let mut d_eta = 0.0f64;
            let (mut db, mut dc, mut dd) = (Vec::new(), Vec::new(), Vec::new());
            for (de, b, c, d) in per {
                d_eta += de;
                db.extend(b);
                dc.extend(c);
                dd.extend(d);
            }
            let zeros = || vec![0.0; s.numel()];
            let (db, dc, dd) = if need_bcd { (db, dc, dd) } else { (zeros(), zeros(), zeros()) };
            vec![
                p[0].requires_grad().then(|| g.to_vec()),
                p[1].requires_grad().then_some(db),
                p[2].requires_grad().then_some(dc),
                p[3].requires_grad().then_some(dd),
                p[4].requires_grad().then(|| vec![d_eta as Real]),
            ]
        },
    )
}
