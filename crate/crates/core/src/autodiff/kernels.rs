//! Forward and backward kernels shared by the tape and the eager executor.
//!
//! Convolution lowers to im2col + gemm. The column buffer is built for a band
//! of output rows at a time so that its size stays under [`COL_BUDGET`]
//! elements regardless of image size.

use crate::error::{Result, SegError};
use crate::tensor::{MatRef, Real, Shape, Tensor};

/// Maximum number of elements in one im2col buffer.
const COL_BUDGET: usize = 1 << 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so the output keeps the input's height and width.
    Same,
    /// No padding; the output shrinks by `k - 1`.
    Valid,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    pad_h: usize,
    pad_w: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn rows_per_band(&self) -> usize {
        (COL_BUDGET / (self.k() * self.ow).max(1)).clamp(1, self.oh.max(1))
    }
}

fn conv_geom(x: Shape, w: Shape, bias_len: usize, padding: Padding) -> Result<ConvGeom> {
    if w.c != x.c {
        return Err(SegError::shape("conv2d", "weight input channels", w.c, x.c));
    }
    if bias_len != w.n {
        return Err(SegError::shape("conv2d", "bias length", bias_len, w.n));
    }
    if w.h == 0 || w.w == 0 {
        return Err(SegError::invalid("conv2d", "empty kernel"));
    }
    let (pad_h, pad_w) = match padding {
        Padding::Same => {
            if w.h.is_multiple_of(2) {
                return Err(SegError::invalid(
                    "conv2d",
                    format!("same padding needs an odd kernel height, got {}", w.h),
                ));
            }
            if w.w.is_multiple_of(2) {
                return Err(SegError::invalid(
                    "conv2d",
                    format!("same padding needs an odd kernel width, got {}", w.w),
                ));
            }
            ((w.h - 1) / 2, (w.w - 1) / 2)
        }
        Padding::Valid => {
            if w.h > x.h {
                return Err(SegError::shape("conv2d", "kernel height", w.h, x.h));
            }
            if w.w > x.w {
                return Err(SegError::shape("conv2d", "kernel width", w.w, x.w));
            }
            (0, 0)
        }
    };
    Ok(ConvGeom {
        ci: x.c,
        h: x.h,
        w: x.w,
        co: w.n,
        kh: w.h,
        kw: w.w,
        pad_h,
        pad_w,
        oh: x.h + 2 * pad_h - w.h + 1,
        ow: x.w + 2 * pad_w - w.w + 1,
    })
}

/// Valid output columns `[lo, hi)` for kernel column `kx`, and the input
/// column matching output column `lo`.
fn col_span(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let lo = g.pad_w.saturating_sub(kx).min(g.ow);
    let hi = (g.w + g.pad_w).saturating_sub(kx).min(g.ow).max(lo);
    (lo, hi)
}

/// Fills `col` (`k x (rows * ow)`, row-major) for output rows `y0..y0 + rows`.
fn im2col<T: Real>(g: &ConvGeom, x: &[T], y0: usize, rows: usize, col: &mut [T]) {
    let len = rows * g.ow;
    for c in 0..g.ci {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[r * len..(r + 1) * len];
                let (lo, hi) = col_span(g, kx);
                for (i, oy) in (y0..y0 + rows).enumerate() {
                    let out = &mut dst[i * g.ow..(i + 1) * g.ow];
                    let iy = (oy + ky).wrapping_sub(g.pad_h);
                    if iy >= g.h {
                        out.fill(T::zero());
                        continue;
                    }
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    if hi > lo {
                        let ix = lo + kx - g.pad_w;
                        out[lo..hi].copy_from_slice(&plane[iy * g.w + ix..iy * g.w + ix + (hi - lo)]);
                    }
                }
            }
        }
    }
}

/// Scatter-adds `col` back onto the input gradient `dx`.
fn col2im<T: Real>(g: &ConvGeom, col: &[T], y0: usize, rows: usize, dx: &mut [T]) {
    let len = rows * g.ow;
    for c in 0..g.ci {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (c * g.kh + ky) * g.kw + kx;
                let src = &col[r * len..(r + 1) * len];
                let (lo, hi) = col_span(g, kx);
                if hi <= lo {
                    continue;
                }
                for (i, oy) in (y0..y0 + rows).enumerate() {
                    let iy = (oy + ky).wrapping_sub(g.pad_h);
                    if iy >= g.h {
                        continue;
                    }
                    let ix = lo + kx - g.pad_w;
                    let dst = &mut plane[iy * g.w + ix..iy * g.w + ix + (hi - lo)];
                    for (d, &s) in dst.iter_mut().zip(&src[i * g.ow + lo..i * g.ow + hi]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

/// Stride-1 2-D convolution (cross-correlation) with per-output-channel bias.
pub fn conv2d<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &[T], padding: Padding) -> Result<Tensor<T>> {
    let g = conv_geom(x.shape(), weight.shape(), bias.len(), padding)?;
    let n = x.shape().n;
    let out_shape = Shape::new(n, g.co, g.oh, g.ow);
    let mut out = Tensor::zeros(out_shape);
    let p = g.oh * g.ow;
    let k = g.k();
    let band = g.rows_per_band();
    let mut col = vec![T::zero(); k * band * g.ow];
    let w = MatRef::rows(weight.data(), g.co, k);
    let in_len = g.ci * g.h * g.w;
    for b in 0..n {
        let xb = &x.data()[b * in_len..(b + 1) * in_len];
        let ob = &mut out.data_mut()[b * g.co * p..(b + 1) * g.co * p];
        let mut y0 = 0;
        while y0 < g.oh {
            let rows = band.min(g.oh - y0);
            let len = rows * g.ow;
            im2col(&g, xb, y0, rows, &mut col[..k * len]);
            T::gemm(
                T::one(),
                w,
                MatRef::rows(&col[..k * len], k, len),
                T::zero(),
                &mut ob[y0 * g.ow..],
                p,
            );
            y0 += rows;
        }
        for (o, &bv) in bias.iter().enumerate() {
            for v in &mut ob[o * p..(o + 1) * p] {
                *v = *v + bv;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`]. Each output is computed only when requested.
pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dweight: Option<Tensor<T>>,
    pub dbias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dout: &Tensor<T>,
    padding: Padding,
    want: [bool; 3],
) -> Result<ConvGrads<T>> {
    let g = conv_geom(x.shape(), weight.shape(), weight.shape().n, padding)?;
    let n = x.shape().n;
    if dout.shape() != Shape::new(n, g.co, g.oh, g.ow) {
        return Err(SegError::invalid(
            "conv2d_backward",
            format!("upstream gradient shape {}", dout.shape()),
        ));
    }
    let [want_dx, want_dw, want_db] = want;
    let p = g.oh * g.ow;
    let k = g.k();
    let in_len = g.ci * g.h * g.w;

    let dbias = want_db.then(|| {
        let mut db = vec![T::zero(); g.co];
        for b in 0..n {
            for (o, acc) in db.iter_mut().enumerate() {
                let start = (b * g.co + o) * p;
                *acc = *acc + dout.data()[start..start + p].iter().copied().sum::<T>();
            }
        }
        db
    });

    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = want_dw.then(|| Tensor::zeros(weight.shape()));
    if want_dx || want_dw {
        let band = g.rows_per_band();
        let mut col = vec![T::zero(); k * band * g.ow];
        for b in 0..n {
            let db_out = &dout.data()[b * g.co * p..(b + 1) * g.co * p];
            let mut y0 = 0;
            while y0 < g.oh {
                let rows = band.min(g.oh - y0);
                let len = rows * g.ow;
                let dtile = MatRef {
                    data: &db_out[y0 * g.ow..],
                    rows: g.co,
                    cols: len,
                    row_stride: p,
                    col_stride: 1,
                };
                if let Some(dw) = dw.as_mut() {
                    im2col(
                        &g,
                        &x.data()[b * in_len..(b + 1) * in_len],
                        y0,
                        rows,
                        &mut col[..k * len],
                    );
                    T::gemm(
                        T::one(),
                        dtile,
                        MatRef::transposed(&col[..k * len], k, len),
                        T::one(),
                        dw.data_mut(),
                        k,
                    );
                }
                if let Some(dx) = dx.as_mut() {
                    let wt = MatRef::transposed(weight.data(), g.co, k);
                    T::gemm(T::one(), wt, dtile, T::zero(), &mut col[..k * len], len);
                    col2im(
                        &g,
                        &col[..k * len],
                        y0,
                        rows,
                        &mut dx.data_mut()[b * in_len..(b + 1) * in_len],
                    );
                }
                y0 += rows;
            }
        }
    }
    Ok(ConvGrads { dx, dweight: dw, dbias })
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the upstream gradient where the input was strictly positive.
pub fn relu_backward<T: Real>(x: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Backward of sigmoid expressed through its output `y`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

/// 2x2 max pooling, stride 2. Also returns, per output element, the flat
/// input index that won; ties go to the first element in row-major order.
pub fn maxpool2x2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) {
        return Err(SegError::invalid("maxpool2x2", format!("height {} is odd", s.h)));
    }
    if !s.w.is_multiple_of(2) {
        return Err(SegError::invalid("maxpool2x2", format!("width {} is odd", s.w)));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    let xd = x.data();
    for plane in 0..s.n * s.c {
        let base = plane * s.h * s.w;
        for oy in 0..oh {
            for ox in 0..ow {
                let first = base + 2 * oy * s.w + 2 * ox;
                let mut best = first;
                for idx in [first + 1, first + s.w, first + s.w + 1] {
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, out)?, argmax))
}

pub fn maxpool2x2_backward<T: Real>(input_shape: Shape, argmax: &[usize], dout: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dout.data()) {
        d[idx] = d[idx] + g;
    }
    dx
}

pub fn upsample_nearest2x<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (oh, ow) = (2 * s.h, 2 * s.w);
    let mut out = Vec::with_capacity(s.n * s.c * oh * ow);
    for plane in x.data().chunks_exact(s.plane().max(1)).take(s.n * s.c) {
        for y in 0..oh {
            let row = &plane[(y / 2) * s.w..(y / 2 + 1) * s.w];
            for &v in row {
                out.push(v);
                out.push(v);
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, oh, ow), out).expect("upsampled length")
}

/// Sums each 2x2 block of upstream gradient onto its source pixel.
pub fn upsample_nearest2x_backward<T: Real>(dout: &Tensor<T>) -> Tensor<T> {
    let s = dout.shape();
    let (h, w) = (s.h / 2, s.w / 2);
    let mut dx = Tensor::zeros(Shape::new(s.n, s.c, h, w));
    let src = dout.data();
    let dst = dx.data_mut();
    for plane in 0..s.n * s.c {
        let ib = plane * s.h * s.w;
        let ob = plane * h * w;
        for y in 0..h {
            for x in 0..w {
                let top = ib + 2 * y * s.w + 2 * x;
                dst[ob + y * w + x] = src[top] + src[top + 1] + src[top + s.w] + src[top + s.w + 1];
            }
        }
    }
    dx
}

pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n {
        return Err(SegError::shape("concat_channels", "batch", sb.n, sa.n));
    }
    if sa.h != sb.h {
        return Err(SegError::shape("concat_channels", "height", sb.h, sa.h));
    }
    if sa.w != sb.w {
        return Err(SegError::shape("concat_channels", "width", sb.w, sa.w));
    }
    let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
    let mut out = Vec::with_capacity(sa.n * (la + lb));
    for i in 0..sa.n {
        out.extend_from_slice(&a.data()[i * la..(i + 1) * la]);
        out.extend_from_slice(&b.data()[i * lb..(i + 1) * lb]);
    }
    Tensor::from_vec(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w), out)
}

/// Splits an upstream gradient at channel `c1`.
pub fn concat_channels_backward<T: Real>(dout: &Tensor<T>, c1: usize) -> (Tensor<T>, Tensor<T>) {
    let s = dout.shape();
    let c2 = s.c - c1;
    let (la, lb) = (c1 * s.plane(), c2 * s.plane());
    let mut da = Vec::with_capacity(s.n * la);
    let mut db = Vec::with_capacity(s.n * lb);
    for chunk in dout.data().chunks_exact((la + lb).max(1)).take(s.n) {
        da.extend_from_slice(&chunk[..la]);
        db.extend_from_slice(&chunk[la..]);
    }
    (
        Tensor::from_vec(Shape::new(s.n, c1, s.h, s.w), da).expect("split a"),
        Tensor::from_vec(Shape::new(s.n, c2, s.h, s.w), db).expect("split b"),
    )
}
