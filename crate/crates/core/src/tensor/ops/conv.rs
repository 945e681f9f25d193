use super::per_item;
use crate::error::{Error, Result};
use crate::tensor::kernels::{gemm, gemm_with, Layout, Window};
use crate::tensor::{Real, Shape, Tensor, Var};

/// Stride and per-axis zero padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        ConvSpec {
            stride,
            pad_h: padding,
            pad_w: padding,
        }
    }

    pub const fn asymmetric(stride: usize, pad_h: usize, pad_w: usize) -> Self {
        ConvSpec { stride, pad_h, pad_w }
    }
}

fn output_extent(
    axis: &'static str,
    input: usize,
    kernel: usize,
    pad: usize,
    stride: usize,
) -> Result<usize> {
    let span = input + 2 * pad;
    if span < kernel {
        return Err(Error::dim(
            axis,
            format!("padded extent {span} is smaller than kernel extent {kernel}"),
        ));
    }
    if (span - kernel) % stride != 0 {
        return Err(Error::config(format!(
            "{axis} output extent ({input} + 2*{pad} - {kernel})/{stride} + 1 is not an integer"
        )));
    }
    Ok((span - kernel) / stride + 1)
}

fn check_bias(bias: Option<&Var>, out_c: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape().numel() != out_c {
            return Err(Error::dim(
                "bias",
                format!("bias has {} values, expected {out_c}", b.shape().numel()),
            ));
        }
    }
    Ok(())
}

/// 2-D cross-correlation. `weight` is `(out_c, in_c, kh, kw)`.
pub fn conv2d(
    input: &Var,
    weight: &Var,
    bias: Option<&Var>,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    conv2d_with(input, weight, bias, ConvSpec::new(stride, padding))
}

pub fn conv2d_with(input: &Var, weight: &Var, bias: Option<&Var>, spec: ConvSpec) -> Result<Var> {
    let xs = input.shape();
    let ws = weight.shape();
    if spec.stride == 0 {
        return Err(Error::config("convolution stride must be positive"));
    }
    if ws.c != xs.c {
        return Err(Error::dim(
            "channel",
            format!("input has {} channels but weight expects {}", xs.c, ws.c),
        ));
    }
    check_bias(bias, ws.n)?;
    let oh = output_extent("height", xs.h, ws.h, spec.pad_h, spec.stride)?;
    let ow = output_extent("width", xs.w, ws.w, spec.pad_w, spec.stride)?;
    let win = Window {
        c: xs.c,
        h: xs.h,
        w: xs.w,
        kh: ws.h,
        kw: ws.w,
        stride: spec.stride,
        pad_h: spec.pad_h,
        pad_w: spec.pad_w,
        oh,
        ow,
    };
    let out_c = ws.n;
    let out_shape = Shape::new(xs.n, out_c, oh, ow);
    let k = win.rows();
    let ohw = win.cols();

    let x = input.data();
    let w = weight.data();
    let b = bias.map(|b| b.data());
    let items = per_item(xs.n, |n| {
        let col = win.im2col(&x[n * xs.item()..(n + 1) * xs.item()]);
        let mut out = vec![0.0; out_c * ohw];
        if let Some(b) = b {
            for (o, chunk) in out.chunks_mut(ohw).enumerate() {
                chunk.fill(b[o]);
            }
        }
        gemm(out_c, k, ohw, w, &col, &mut out);
        out
    });
    let value = Tensor::new(out_shape, items.concat())?;

    let mut parents = vec![input.clone(), weight.clone()];
    parents.extend(bias.cloned());
    Var::from_op("conv2d", value, parents, move |g: &[Real], p: &[Var]| {
        let need_x = p[0].requires_grad();
        let need_w = p[1].requires_grad();
        let x = p[0].data();
        let w = p[1].data();
        let per = per_item(xs.n, |n| {
            let g_item = &g[n * out_c * ohw..(n + 1) * out_c * ohw];
            let dx = need_x.then(|| {
                let mut dcol = vec![0.0; k * ohw];
                gemm_with(k, out_c, ohw, w, Layout::transposed(k), g_item, Layout::rows(ohw), &mut dcol);
                let mut dx = vec![0.0; xs.item()];
                win.col2im(&dcol, &mut dx);
                dx
            });
            let dw = need_w.then(|| {
                let col = win.im2col(&x[n * xs.item()..(n + 1) * xs.item()]);
                let mut dw = vec![0.0; out_c * k];
                gemm_with(out_c, ohw, k, g_item, Layout::rows(ohw), &col, Layout::transposed(ohw), &mut dw);
                dw
            });
            (dx, dw)
        });
        let mut dx_all = need_x.then(|| Vec::with_capacity(xs.numel()));
        let mut dw_all = need_w.then(|| vec![0.0; out_c * k]);
        for (dx, dw) in per {
            if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
                all.extend_from_slice(&dx);
            }
            if let (Some(all), Some(dw)) = (dw_all.as_mut(), dw) {
                all.iter_mut().zip(&dw).for_each(|(a, d)| *a += d);
            }
        }
        let mut grads = vec![dx_all, dw_all];
        if p.len() > 2 {
            grads.push(p[2].requires_grad().then(|| bias_grad(g, xs.n, out_c, ohw)));
        }
        grads
    })
}

fn bias_grad(g: &[Real], n: usize, out_c: usize, plane: usize) -> Vec<Real> {
    let mut db = vec![0.0f64; out_c];
    for item in 0..n {
        for (o, acc) in db.iter_mut().enumerate() {
            let start = (item * out_c + o) * plane;
            *acc += g[start..start + plane].iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    db.into_iter().map(|v| v as Real).collect()
}

/// Transposed convolution (the input-gradient of `conv2d`). `weight` is
/// `(in_c, out_c, kh, kw)`; output extent is `(h-1)·stride − 2·padding + kh + output_padding`.
pub fn conv_transpose2d(
    input: &Var,
    weight: &Var,
    bias: Option<&Var>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Var> {
    let xs = input.shape();
    let ws = weight.shape();
    if stride == 0 {
        return Err(Error::config("convolution stride must be positive"));
    }
    if output_padding >= stride {
        return Err(Error::config(format!(
            "output padding {output_padding} must be smaller than stride {stride}"
        )));
    }
    if ws.n != xs.c {
        return Err(Error::dim(
            "channel",
            format!("input has {} channels but weight expects {}", xs.c, ws.n),
        ));
    }
    let out_c = ws.c;
    check_bias(bias, out_c)?;
    let extent = |axis: &'static str, len: usize, kernel: usize| -> Result<usize> {
        let full = len.saturating_sub(1) * stride + kernel + output_padding;
        if len == 0 || full <= 2 * padding {
            return Err(Error::dim(
                axis,
                format!("transposed convolution of extent {len} yields no output"),
            ));
        }
        Ok(full - 2 * padding)
    };
    let oh = extent("height", xs.h, ws.h)?;
    let ow = extent("width", xs.w, ws.w)?;
    // The forward conv that this op transposes maps (out_c, oh, ow) onto the input grid.
    let win = Window {
        c: out_c,
        h: oh,
        w: ow,
        kh: ws.h,
        kw: ws.w,
        stride,
        pad_h: padding,
        pad_w: padding,
        oh: xs.h,
        ow: xs.w,
    };
    let in_c = xs.c;
    let k = win.rows();
    let hw = xs.plane();
    let out_shape = Shape::new(xs.n, out_c, oh, ow);
    let out_item = out_shape.item();

    let x = input.data();
    let w = weight.data();
    let b = bias.map(|b| b.data());
    let items = per_item(xs.n, |n| {
        let mut col = vec![0.0; k * hw];
        let x_item = &x[n * xs.item()..(n + 1) * xs.item()];
        gemm_with(k, in_c, hw, w, Layout::transposed(k), x_item, Layout::rows(hw), &mut col);
        let mut out = vec![0.0; out_item];
        if let Some(b) = b {
            for (o, chunk) in out.chunks_mut(oh * ow).enumerate() {
                chunk.fill(b[o]);
            }
        }
        win.col2im(&col, &mut out);
        out
    });
    let value = Tensor::new(out_shape, items.concat())?;

    let mut parents = vec![input.clone(), weight.clone()];
    parents.extend(bias.cloned());
    Var::from_op("conv_transpose2d", value, parents, move |g: &[Real], p: &[Var]| {
        let need_x = p[0].requires_grad();
        let need_w = p[1].requires_grad();
        let x = p[0].data();
        let w = p[1].data();
        let per = per_item(xs.n, |n| {
            let gcol = win.im2col(&g[n * out_item..(n + 1) * out_item]);
            let dx = need_x.then(|| {
                let mut dx = vec![0.0; xs.item()];
                gemm(in_c, k, hw, w, &gcol, &mut dx);
                dx
            });
            let dw = need_w.then(|| {
                let x_item = &x[n * xs.item()..(n + 1) * xs.item()];
                let mut dw = vec![0.0; in_c * k];
                gemm_with(in_c, hw, k, x_item, Layout::rows(hw), &gcol, Layout::transposed(hw), &mut dw);
                dw
            });
            (dx, dw)
        });
        let mut dx_all = need_x.then(|| Vec::with_capacity(xs.numel()));
        let mut dw_all = need_w.then(|| vec![0.0; in_c * k]);
        for (dx, dw) in per {
            if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
                all.extend_from_slice(&dx);
            }
            if let (Some(all), Some(dw)) = (dw_all.as_mut(), dw) {
                all.iter_mut().zip(&dw).for_each(|(a, d)| *a += d);
            }
        }
        let mut grads = vec![dx_all, dw_all];
        if p.len() > 2 {
            grads.push(p[2].requires_grad().then(|| bias_grad(g, xs.n, out_c, oh * ow)));
        }
        grads
    })
}
