//! Matrix operations on tensors viewed as a batch of `(h, w)` matrices, one per `(n, c)`.

use super::per_item;
use crate::error::{Error, Result};
use crate::tensor::kernels::{gemm, gemm_with, transpose as transpose_buf, Layout};
use crate::tensor::{Real, Shape, Tensor, Var};

/// Batched matrix product: `(n, c, r, k) · (n, c, k, m) -> (n, c, r, m)`.
pub fn matmul(a: &Var, b: &Var) -> Result<Var> {
    let sa = a.shape();
    let sb = b.shape();
    if sa.n != sb.n {
        return Err(Error::dim("batch", format!("matmul batch {} vs {}", sa.n, sb.n)));
    }
    if sa.c != sb.c {
        return Err(Error::dim("channel", format!("matmul channel {} vs {}", sa.c, sb.c)));
    }
    if sa.w != sb.h {
        return Err(Error::dim(
            "inner",
            format!("matmul inner extents {} and {} disagree", sa.w, sb.h),
        ));
    }
    let (r, k, m) = (sa.h, sa.w, sb.w);
    let mats = sa.n * sa.c;
    let out_shape = Shape::new(sa.n, sa.c, r, m);
    let (ad, bd) = (a.data(), b.data());
    let items = per_item(mats, |i| {
        let mut c = vec![0.0; r * m];
        gemm(r, k, m, &ad[i * r * k..(i + 1) * r * k], &bd[i * k * m..(i + 1) * k * m], &mut c);
        c
    });
    let value = Tensor::new(out_shape, items.concat())?;
    Var::from_op("matmul", value, vec![a.clone(), b.clone()], move |g: &[Real], p: &[Var]| {
        let (ad, bd) = (p[0].data(), p[1].data());
        let da = p[0].requires_grad().then(|| {
            per_item(mats, |i| {
                // dA = dC · Bᵀ
                let mut da = vec![0.0; r * k];
                let (gi, bi) = (&g[i * r * m..(i + 1) * r * m], &bd[i * k * m..(i + 1) * k * m]);
                gemm_with(r, m, k, gi, Layout::rows(m), bi, Layout::transposed(m), &mut da);
                da
            })
            .concat()
        });
        let db = p[1].requires_grad().then(|| {
            per_item(mats, |i| {
                // dB = Aᵀ · dC
                let mut db = vec![0.0; k * m];
                let (ai, gi) = (&ad[i * r * k..(i + 1) * r * k], &g[i * r * m..(i + 1) * r * m]);
                gemm_with(k, r, m, ai, Layout::transposed(k), gi, Layout::rows(m), &mut db);
                db
            })
            .concat()
        });
        vec![da, db]
    })
}

/// Swap the last two axes of every matrix.
pub fn transpose(a: &Var) -> Result<Var> {
    let s = a.shape();
    let mats = s.n * s.c;
    let (h, w) = (s.h, s.w);
    let data: Vec<Real> = (0..mats)
        .flat_map(|i| transpose_buf(&a.data()[i * h * w..(i + 1) * h * w], h, w))
        .collect();
    let value = Tensor::new(Shape::new(s.n, s.c, w, h), data)?;
    Var::from_op("transpose", value, vec![a.clone()], move |g: &[Real], _: &[Var]| {
        let dx = (0..mats)
            .flat_map(|i| transpose_buf(&g[i * h * w..(i + 1) * h * w], w, h))
            .collect();
        vec![Some(dx)]
    })
}

/// Softmax along the last axis, stabilised by subtracting each row's maximum.
pub fn softmax_rows(input: &Var) -> Result<Var> {
    let s = input.shape();
    let x = input.data();
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(
            "softmax_rows",
            format!("non-finite input {} at flat index {pos}", x[pos]),
        ));
    }
    let cols = s.w;
    if cols == 0 {
        return Err(Error::dim("width", "softmax over an empty row"));
    }
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        softmax_into(row, dst);
    }
    let value = Tensor::new(s, out)?;
    let y = value.data().to_vec();
    Var::from_op("softmax_rows", value, vec![input.clone()], move |g: &[Real], _: &[Var]| {
        let mut dx = vec![0.0; g.len()];
        for ((yr, gr), dr) in y.chunks(cols).zip(g.chunks(cols)).zip(dx.chunks_mut(cols)) {
            let inner: f64 = yr.iter().zip(gr).map(|(&a, &b)| a as f64 * b as f64).sum();
            for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                *d = yv * (gv - inner as Real);
            }
        }
        vec![Some(dx)]
    })
}

/// Stable softmax of one row, normaliser accumulated in double precision.
pub(crate) fn softmax_into(row: &[Real], dst: &mut [Real]) {
    let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let mut total = 0.0f64;
    for (d, &v) in dst.iter_mut().zip(row) {
        *d = (v - max).exp();
        total += *d as f64;
    }
    let inv = (1.0 / total) as Real;
    dst.iter_mut().for_each(|d| *d *= inv);
}
