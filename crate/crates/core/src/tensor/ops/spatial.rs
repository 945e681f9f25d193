use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor, Var};

/// 2×2 non-overlapping max pooling. Ties send the gradient to the first element in
/// row-major scan order of the window.
pub fn maxpool2(input: &Var) -> Result<Var> {
    let s = input.shape();
    if s.h % 2 != 0 {
        return Err(Error::dim("height", format!("maxpool2 needs an even height, got {}", s.h)));
    }
    if s.w % 2 != 0 {
        return Err(Error::dim("width", format!("maxpool2 needs an even width, got {}", s.w)));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let x = input.data();
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    for plane in 0..s.n * s.c {
        let base = plane * s.plane();
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + 2 * y * s.w + 2 * xo;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * s.w + 2 * xo + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    let value = Tensor::new(out_shape, out)?;
    let in_len = s.numel();
    Var::from_op("maxpool2", value, vec![input.clone()], move |g: &[Real], _: &[Var]| {
        let mut dx = vec![0.0; in_len];
        for (&i, &gv) in argmax.iter().zip(g) {
            dx[i] += gv;
        }
        vec![Some(dx)]
    })
}

#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: Real,
}

/// Half-pixel (align-corners-false) sampling positions along one axis.
fn taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|dst| {
            let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap {
                lo,
                hi,
                frac: frac as Real,
            }
        })
        .collect()
}

fn check_targets(s: Shape, target_h: usize, target_w: usize) -> Result<()> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::dim(
            if target_h == 0 { "height" } else { "width" },
            "bilinear target extent must be positive",
        ));
    }
    if s.h == 0 || s.w == 0 {
        return Err(Error::dim("height", "cannot resize an empty plane"));
    }
    Ok(())
}

/// Bilinear resize of a plain tensor with align-corners-false sampling.
pub fn bilinear_resize_tensor(input: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    let s = input.shape();
    check_targets(s, target_h, target_w)?;
    let ty = taps(s.h, target_h);
    let tx = taps(s.w, target_w);
    let out_shape = Shape::new(s.n, s.c, target_h, target_w);
    let x = input.data();
    let mut out = Vec::with_capacity(out_shape.numel());
    for plane in 0..s.n * s.c {
        let p = &x[plane * s.plane()..(plane + 1) * s.plane()];
        for a in &ty {
            let r0 = &p[a.lo * s.w..(a.lo + 1) * s.w];
            let r1 = &p[a.hi * s.w..(a.hi + 1) * s.w];
            for b in &tx {
                let top = r0[b.lo] + (r0[b.hi] - r0[b.lo]) * b.frac;
                let bottom = r1[b.lo] + (r1[b.hi] - r1[b.lo]) * b.frac;
                out.push(top + (bottom - top) * a.frac);
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Differentiable bilinear resize (up or down) with align-corners-false sampling.
pub fn bilinear_resize(input: &Var, target_h: usize, target_w: usize) -> Result<Var> {
    let s = input.shape();
    let value = bilinear_resize_tensor(input.value(), target_h, target_w)?;
    let ty = taps(s.h, target_h);
    let tx = taps(s.w, target_w);
    Var::from_op("bilinear_resize", value, vec![input.clone()], move |g: &[Real], _: &[Var]| {
        let mut dx = vec![0.0; s.numel()];
        let out_plane = target_h * target_w;
        for plane in 0..s.n * s.c {
            let gp = &g[plane * out_plane..(plane + 1) * out_plane];
            let dp = &mut dx[plane * s.plane()..(plane + 1) * s.plane()];
            for (yi, a) in ty.iter().enumerate() {
                for (xi, b) in tx.iter().enumerate() {
                    let gv = gp[yi * target_w + xi];
                    let top = gv * (1.0 - a.frac);
                    let bottom = gv * a.frac;
                    dp[a.lo * s.w + b.lo] += top * (1.0 - b.frac);
                    dp[a.lo * s.w + b.hi] += top * b.frac;
                    dp[a.hi * s.w + b.lo] += bottom * (1.0 - b.frac);
                    dp[a.hi * s.w + b.hi] += bottom * b.frac;
                }
            }
        }
        vec![Some(dx)]
    })
}

/// Bilinear enlargement; the target must not be smaller than the input on either axis.
pub fn bilinear_upsample(input: &Var, target_h: usize, target_w: usize) -> Result<Var> {
    let s = input.shape();
    check_targets(s, target_h, target_w)?;
    if target_h < s.h {
        return Err(Error::dim("height", format!("cannot upsample {} down to {target_h}", s.h)));
    }
    if target_w < s.w {
        return Err(Error::dim("width", format!("cannot upsample {} down to {target_w}", s.w)));
    }
    bilinear_resize(input, target_h, target_w)
}
