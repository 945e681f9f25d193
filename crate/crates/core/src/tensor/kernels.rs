//! Low-level dense kernels on flat row-major buffers. No shape checking here; callers in
//! `ops` validate extents first.

use super::Real;

/// Row and column strides of a matrix operand.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub row: usize,
    pub col: usize,
}

impl Layout {
    /// Row-major with `cols` columns.
    pub fn rows(cols: usize) -> Self {
        Layout { row: cols, col: 1 }
    }

    /// The transpose of a row-major matrix with `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Layout { row: 1, col: cols }
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[Real], b: &[Real], c: &mut [Real]) {
    gemm_with(m, k, n, a, Layout::rows(k), b, Layout::rows(n), c);
}

/// `c[m×n] += a[m×k] · b[k×n]` with strided operands and row-major `c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_with(
    m: usize,
    k: usize,
    n: usize,
    a: &[Real],
    la: Layout,
    b: &[Real],
    lb: Layout,
    c: &mut [Real],
) {
    let span = |rows: usize, cols: usize, l: Layout| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * l.row + (cols - 1) * l.col + 1
        }
    };
    assert!(a.len() >= span(m, k, la) && b.len() >= span(k, n, lb) && c.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (ra, ca) = (la.row as isize, la.col as isize);
    let (rb, cb) = (lb.row as isize, lb.col as isize);
    // SAFETY: the assertion above keeps every strided access inside the slices, and `c`
    // is exclusively borrowed.
    unsafe {
        #[cfg(not(feature = "single-precision"))]
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), ra, ca, b.as_ptr(), rb, cb, 1.0, c.as_mut_ptr(), n as isize, 1,
        );
        #[cfg(feature = "single-precision")]
        matrixmultiply::sgemm(
            m, k, n, 1.0, a.as_ptr(), ra, ca, b.as_ptr(), rb, cb, 1.0, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `y += alpha · x`.
#[inline]
pub(crate) fn axpy(alpha: Real, x: &[Real], y: &mut [Real]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product accumulated in double precision with four independent partial sums.
#[inline]
pub(crate) fn dot(a: &[Real], b: &[Real]) -> f64 {
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    let mut acc = [0.0f64; 4];
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] as f64 * y[l] as f64;
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (&x, &y) in ra.iter().zip(rb) {
        s += x as f64 * y as f64;
    }
    s
}

pub(crate) fn transpose(a: &[Real], rows: usize, cols: usize) -> Vec<Real> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// Geometry of a strided, zero-padded sliding window from a `(c, h, w)` input onto an
/// `(oh, ow)` grid of window positions.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.stride == 1
            && self.pad_h == 0
            && self.pad_w == 0
            && self.oh == self.h
            && self.ow == self.w
    }

    /// Unfold a `(c, h, w)` buffer into a `(c·kh·kw, oh·ow)` patch matrix.
    pub fn im2col(&self, x: &[Real]) -> Vec<Real> {
        if self.is_pointwise() {
            return x[..self.c * self.h * self.w].to_vec();
        }
        let cols = self.cols();
        let mut out = vec![0.0; self.rows() * cols];
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut out[row * cols..(row + 1) * cols];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad_h as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let dst_row = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad_w as isize;
                            if ix >= 0 && ix < self.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Fold a patch matrix back, summing overlapping contributions into `x`.
    pub fn col2im(&self, col: &[Real], x: &mut [Real]) {
        if self.is_pointwise() {
            axpy(1.0, &col[..x.len()], x);
            return;
        }
        let cols = self.cols();
        for ci in 0..self.c {
            let plane = &mut x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad_h as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst_row = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let src_row = &src[oy * self.ow..(oy + 1) * self.ow];
                        for (ox, &s) in src_row.iter().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad_w as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst_row[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}
