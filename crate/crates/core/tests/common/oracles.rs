//! Brute-force reference implementations, written as directly as possible from the
//! defining sums. Everything is evaluated in f64 on flat NCHW buffers.

#![allow(dead_code)]

use lesion_gan::{Shape, Tensor};

pub fn f64s(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn at(s: Shape, n: usize, c: usize, y: usize, x: usize) -> usize {
    ((n * s.c + c) * s.h + y) * s.w + x
}

/// Quadruple-loop cross-correlation with zero padding. `w` is `(out_c, in_c, kh, kw)`.
pub fn conv2d(
    x: &[f64],
    xs: Shape,
    w: &[f64],
    ws: Shape,
    bias: Option<&[f64]>,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
) -> (Vec<f64>, Shape) {
    let oh = (xs.h + 2 * pad_h - ws.h) / stride + 1;
    let ow = (xs.w + 2 * pad_w - ws.w) / stride + 1;
    let os = Shape::new(xs.n, ws.n, oh, ow);
    let mut out = vec![0.0; os.numel()];
    for n in 0..xs.n {
        for o in 0..ws.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for c in 0..xs.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                let iy = (oy * stride + ky) as isize - pad_h as isize;
                                let ix = (ox * stride + kx) as isize - pad_w as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += x[at(xs, n, c, iy as usize, ix as usize)]
                                    * w[at(ws, o, c, ky, kx)];
                            }
                        }
                    }
                    out[at(os, n, o, oy, ox)] = acc;
                }
            }
        }
    }
    (out, os)
}

/// Scatter definition: every input pixel adds its weighted kernel into the output at
/// `(i·stride − pad + k)`. `w` is `(in_c, out_c, k, k)`.
pub fn conv_transpose2d(
    x: &[f64],
    xs: Shape,
    w: &[f64],
    ws: Shape,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> (Vec<f64>, Shape) {
    let oh = (xs.h - 1) * stride + ws.h + out_pad - 2 * pad;
    let ow = (xs.w - 1) * stride + ws.w + out_pad - 2 * pad;
    let os = Shape::new(xs.n, ws.c, oh, ow);
    let mut out = vec![0.0; os.numel()];
    for n in 0..xs.n {
        for o in 0..ws.c {
            if let Some(b) = bias {
                for y in 0..oh {
                    for xx in 0..ow {
                        out[at(os, n, o, y, xx)] = b[o];
                    }
                }
            }
        }
        for c in 0..xs.c {
            for i in 0..xs.h {
                for j in 0..xs.w {
                    let v = x[at(xs, n, c, i, j)];
                    for o in 0..ws.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                let y = (i * stride + ky) as isize - pad as isize;
                                let xx = (j * stride + kx) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= oh as isize || xx >= ow as isize {
                                    continue;
                                }
                                out[at(os, n, o, y as usize, xx as usize)] +=
                                    v * w[at(ws, c, o, ky, kx)];
                            }
                        }
                    }
                }
            }
        }
    }
    (out, os)
}

/// Maximum over each 2×2 window.
pub fn maxpool2(x: &[f64], xs: Shape) -> Vec<f64> {
    let mut out = Vec::new();
    for n in 0..xs.n {
        for c in 0..xs.c {
            for y in 0..xs.h / 2 {
                for xx in 0..xs.w / 2 {
                    let window = [
                        x[at(xs, n, c, 2 * y, 2 * xx)],
                        x[at(xs, n, c, 2 * y, 2 * xx + 1)],
                        x[at(xs, n, c, 2 * y + 1, 2 * xx)],
                        x[at(xs, n, c, 2 * y + 1, 2 * xx + 1)],
                    ];
                    out.push(window.into_iter().fold(f64::NEG_INFINITY, f64::max));
                }
            }
        }
    }
    out
}

/// Half-pixel source coordinate, clamped into the valid range.
fn source_coord(dst: usize, in_len: usize, out_len: usize) -> f64 {
    let src = (dst as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
    src.clamp(0.0, (in_len - 1) as f64)
}

/// Bilinear resize as a tent-weighted sum over every source pixel.
pub fn bilinear(x: &[f64], xs: Shape, oh: usize, ow: usize) -> Vec<f64> {
    let tent = |d: f64| (1.0 - d.abs()).max(0.0);
    let mut out = Vec::new();
    for n in 0..xs.n {
        for c in 0..xs.c {
            for y in 0..oh {
                let sy = source_coord(y, xs.h, oh);
                for xx in 0..ow {
                    let sx = source_coord(xx, xs.w, ow);
                    let mut acc = 0.0;
                    for iy in 0..xs.h {
                        for ix in 0..xs.w {
                            acc += tent(sy - iy as f64) * tent(sx - ix as f64) * x[at(xs, n, c, iy, ix)];
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Row softmax by direct `exp(v) / Σ exp(v)`.
pub fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    x.chunks(cols)
        .flat_map(|row| {
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            row.iter().map(move |v| v.exp() / total).collect::<Vec<_>>()
        })
        .collect()
}

/// Channel attention: `x_ji = softmax_i(A_i · A_j)`, `E_j = γ Σ_i x_ji A_i + A_j`.
pub fn channel_attention(a: &[f64], s: Shape, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let p = s.h * s.w;
    let mut out = a.to_vec();
    let mut maps = Vec::new();
    for n in 0..s.n {
        let ch = |c: usize| &a[(n * s.c + c) * p..(n * s.c + c + 1) * p];
        let mut gram = Vec::new();
        for j in 0..s.c {
            for i in 0..s.c {
                gram.push(ch(i).iter().zip(ch(j)).map(|(u, v)| u * v).sum::<f64>());
            }
        }
        let x = softmax_rows(&gram, s.c);
        for j in 0..s.c {
            for k in 0..p {
                let mix: f64 = (0..s.c).map(|i| x[j * s.c + i] * ch(i)[k]).sum();
                out[(n * s.c + j) * p + k] += gamma * mix;
            }
        }
        maps.extend(x);
    }
    (out, maps)
}

/// Position attention: `s_ji = softmax_i(B_i · C_j)` over positions, with `B_i` the channel
/// vector at position `i`; `E_j = η Σ_i s_ji D_i + A_j`.
pub fn position_attention(
    a: &[f64],
    b: &[f64],
    c: &[f64],
    d: &[f64],
    s: Shape,
    eta: f64,
) -> (Vec<f64>, Vec<f64>) {
    let p = s.h * s.w;
    let mut out = a.to_vec();
    let mut maps = Vec::new();
    for n in 0..s.n {
        let idx = |ch: usize, pos: usize| (n * s.c + ch) * p + pos;
        let mut logits = Vec::new();
        for j in 0..p {
            for i in 0..p {
                logits.push((0..s.c).map(|ch| b[idx(ch, i)] * c[idx(ch, j)]).sum::<f64>());
            }
        }
        let sm = softmax_rows(&logits, p);
        for ch in 0..s.c {
            for j in 0..p {
                let mix: f64 = (0..p).map(|i| sm[j * p + i] * d[idx(ch, i)]).sum();
                out[idx(ch, j)] += eta * mix;
            }
        }
        maps.extend(sm);
    }
    (out, maps)
}

/// Full `(out_c, in_c, d, d)` kernel of a rank-1 factorized pair: vertical `(mid, in_c, d, 1)`
/// then horizontal `(out_c, mid, 1, d)`.
pub fn rank1_kernel(v: &[f64], vs: Shape, h: &[f64], hs: Shape) -> (Vec<f64>, Shape) {
    let d = vs.h;
    let ks = Shape::new(hs.n, vs.c, d, d);
    let mut k = vec![0.0; ks.numel()];
    for o in 0..hs.n {
        for c in 0..vs.c {
            for ky in 0..d {
                for kx in 0..d {
                    k[at(ks, o, c, ky, kx)] = (0..vs.n)
                        .map(|m| h[at(hs, o, m, 0, kx)] * v[at(vs, m, c, ky, 0)])
                        .sum();
                }
            }
        }
    }
    (k, ks)
}

/// Per-pixel confusion tally `(tp, fp, fn, tn)` of binary masks.
pub fn tally(gt: &[f64], pred: &[f64]) -> (u64, u64, u64, u64) {
    let mut t = (0, 0, 0, 0);
    for (&g, &p) in gt.iter().zip(pred) {
        match (g > 0.5, p > 0.5) {
            (true, true) => t.0 += 1,
            (false, true) => t.1 += 1,
            (true, false) => t.2 += 1,
            (false, false) => t.3 += 1,
        }
    }
    t
}

/// Soft Jaccard loss `1 − Σgp / (Σg² + Σp² − Σgp)`.
pub fn soft_jaccard(g: &[f64], p: &[f64]) -> f64 {
    let gp: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
    let gg: f64 = g.iter().map(|a| a * a).sum();
    let pp: f64 = p.iter().map(|a| a * a).sum();
    1.0 - gp / (gg + pp - gp)
}
