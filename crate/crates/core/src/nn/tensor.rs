//! Scalar abstraction, matrix products and channel-major activations.

use std::fmt::Debug;

/// Floating-point element type of a network (`f32` for training, `f64` for
/// gradient checks).
pub trait Scalar: num_traits::Float + Default + Send + Sync + Debug + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` on strided row/column layouts.
    ///
    /// # Safety
    /// Every addressed element must lie inside the corresponding buffer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix view, optionally read as its transpose.
#[derive(Clone, Copy)]
pub struct MatRef<'a, F> {
    pub data: &'a [F],
    /// Stored rows and columns.
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, F> MatRef<'a, F> {
    pub fn new(data: &'a [F], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer size");
        Self { data, rows, cols, transposed: false }
    }

    pub fn t(self) -> Self {
        Self { transposed: !self.transposed, ..self }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a * b + beta * c` where `c` is row-major `m x n`.
pub fn matmul<F: Scalar>(a: MatRef<'_, F>, b: MatRef<'_, F>, c: &mut [F], beta: F) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(c.len(), m * n, "output buffer size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: shapes were checked against the buffer lengths above.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            F::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Activation batch stored channel-major: index `((c * n + b) * h + y) * w + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation<F> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Activation<F> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self { channels, batch, height, width, data: vec![F::zero(); channels * batch * height * width] }
    }

    pub fn same_shape(&self) -> Self {
        Self::zeros(self.channels, self.batch, self.height, self.width)
    }

    /// Elements per channel.
    pub fn plane(&self) -> usize {
        self.batch * self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[F] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [F] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }
}

/// Geometry of a square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.kernel) / self.stride + 1, (w + 2 * self.pad - self.kernel) / self.stride + 1)
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Output columns `ox` whose input column `ox * s + kx - p` lies in `[0, w)`.
fn valid_columns(wo: usize, w: usize, s: usize, kx: usize, p: usize) -> std::ops::Range<usize> {
    let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
    // Largest ox with ox * s + kx - p <= w - 1.
    let hi = if w + p > kx { ((w + p - kx - 1) / s + 1).min(wo) } else { 0 };
    lo..hi.max(lo)
}

/// Unfolds `x` into a `patch_len x (batch * ho * wo)` matrix.
pub fn im2col<F: Scalar>(x: &Activation<F>, g: &ConvGeometry) -> Vec<F> {
    let (ho, wo) = g.output_size(x.height, x.width);
    let cols = x.batch * ho * wo;
    let mut out = vec![F::zero(); g.patch_len() * cols];
    let (k, s, p) = (g.kernel, g.stride, g.pad);
    for ci in 0..g.in_channels {
        let src = x.channel(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut out[((ci * k + ky) * k + kx) * cols..][..cols];
                let valid = valid_columns(wo, x.width, s, kx, p);
                if valid.is_empty() {
                    continue;
                }
                let ix0 = valid.start * s + kx - p;
                for b in 0..x.batch {
                    for oy in 0..ho {
                        let iy = (oy * s + ky).wrapping_sub(p);
                        if iy >= x.height {
                            continue;
                        }
                        let src_row = &src[(b * x.height + iy) * x.width..][..x.width];
                        let dst = &mut row[(b * ho + oy) * wo..][valid.clone()];
                        if s == 1 {
                            dst.copy_from_slice(&src_row[ix0..ix0 + dst.len()]);
                        } else {
                            for (d, v) in dst.iter_mut().zip(src_row[ix0..].iter().step_by(s)) {
                                *d = *v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
pub fn col2im<F: Scalar>(
    cols_data: &[F],
    g: &ConvGeometry,
    batch: usize,
    height: usize,
    width: usize,
) -> Activation<F> {
    let (ho, wo) = g.output_size(height, width);
    let cols = batch * ho * wo;
    let mut dx = Activation::zeros(g.in_channels, batch, height, width);
    let (k, s, p) = (g.kernel, g.stride, g.pad);
    for ci in 0..g.in_channels {
        let dst = dx.channel_mut(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols_data[((ci * k + ky) * k + kx) * cols..][..cols];
                let valid = valid_columns(wo, width, s, kx, p);
                if valid.is_empty() {
                    continue;
                }
                let ix0 = valid.start * s + kx - p;
                for b in 0..batch {
                    for oy in 0..ho {
                        let iy = (oy * s + ky).wrapping_sub(p);
                        if iy >= height {
                            continue;
                        }
                        let dst_row = &mut dst[(b * height + iy) * width..][..width];
                        let src = &row[(b * ho + oy) * wo..][valid.clone()];
                        if s == 1 {
                            for (d, &v) in dst_row[ix0..ix0 + src.len()].iter_mut().zip(src) {
                                *d = *d + v;
                            }
                        } else {
                            for (d, &v) in dst_row[ix0..].iter_mut().step_by(s).zip(src) {
                                *d = *d + v;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Convolution without bias; `weight` is `out x in x k x k`.
pub fn conv_forward<F: Scalar>(x: &Activation<F>, weight: &[F], g: &ConvGeometry) -> Activation<F> {
    let (ho, wo) = g.output_size(x.height, x.width);
    let mut y = Activation::zeros(g.out_channels, x.batch, ho, wo);
    let n = x.batch * ho * wo;
    let cols = im2col(x, g);
    matmul(
        MatRef::new(weight, g.out_channels, g.patch_len()),
        MatRef::new(&cols, g.patch_len(), n),
        &mut y.data,
        F::zero(),
    );
    y
}

/// Returns `(dx, dweight)`; `dx` is skipped when `need_dx` is false.
pub fn conv_backward<F: Scalar>(
    x: &Activation<F>,
    weight: &[F],
    g: &ConvGeometry,
    dy: &Activation<F>,
    need_dx: bool,
) -> (Option<Activation<F>>, Vec<F>) {
    let n = dy.plane();
    let cols = im2col(x, g);
    let mut dw = vec![F::zero(); weight.len()];
    matmul(MatRef::new(&dy.data, g.out_channels, n), MatRef::new(&cols, g.patch_len(), n).t(), &mut dw, F::zero());
    let dx = need_dx.then(|| {
        let mut dcols = cols;
        matmul(
            MatRef::new(weight, g.out_channels, g.patch_len()).t(),
            MatRef::new(&dy.data, g.out_channels, n),
            &mut dcols,
            F::zero(),
        );
        col2im(&dcols, g, x.batch, x.height, x.width)
    });
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Activation<f64>, w: &[f64], g: &ConvGeometry) -> Activation<f64> {
        let (ho, wo) = g.output_size(x.height, x.width);
        let mut y = Activation::zeros(g.out_channels, x.batch, ho, wo);
        for co in 0..g.out_channels {
            for b in 0..x.batch {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..g.in_channels {
                            for ky in 0..g.kernel {
                                for kx in 0..g.kernel {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= x.height as isize || ix >= x.width as isize {
                                        continue;
                                    }
                                    let xv =
                                        x.data[((ci * x.batch + b) * x.height + iy as usize) * x.width + ix as usize];
                                    acc += xv * w[((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx];
                                }
                            }
                        }
                        y.data[((co * x.batch + b) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn filled(c: usize, b: usize, h: usize, w: usize, seed: u64) -> Activation<f64> {
        let mut a = Activation::zeros(c, b, h, w);
        for (i, v) in a.data.iter_mut().enumerate() {
            *v = (((i as u64 + 1).wrapping_mul(seed) % 1000) as f64) / 500.0 - 1.0;
        }
        a
    }

    #[test]
    fn conv_matches_direct_summation() {
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (1, 2, 0), (3, 1, 0)] {
            let g = ConvGeometry { in_channels: 3, out_channels: 4, kernel: k, stride: s, pad: p };
            let x = filled(3, 2, 7, 6, 7919);
            let w: Vec<f64> = (0..4 * 3 * k * k).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
            let fast = conv_forward(&x, &w, &g);
            let slow = naive_conv(&x, &w, &g);
            assert_eq!((fast.height, fast.width), (slow.height, slow.width));
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeometry { in_channels: 2, out_channels: 1, kernel: 3, stride: 2, pad: 1 };
        let x = filled(2, 2, 5, 6, 104729);
        let cols = im2col(&x, &g);
        let r: Vec<f64> = (0..cols.len()).map(|i| ((i * 13 % 17) as f64) - 8.0).collect();
        let lhs: f64 = cols.iter().zip(&r).map(|(a, b)| a * b).sum();
        let back = col2im(&r, &g, 2, 5, 6);
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        for &(k, s, p, h) in &[(3, 1, 1, 6), (3, 2, 1, 6), (1, 2, 0, 5), (3, 1, 1, 3)] {
            let g = ConvGeometry { in_channels: 2, out_channels: 3, kernel: k, stride: s, pad: p };
            let x = filled(2, 4, h, h, 7919);
            let w: Vec<f64> = (0..3 * 2 * k * k).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
            let y = conv_forward(&x, &w, &g);
            let r: Vec<f64> = (0..y.data.len()).map(|i| ((i * 13 % 17) as f64 - 8.0) / 9.0).collect();
            let dy = Activation { data: r.clone(), ..y.clone() };
            let (dx, dw) = conv_backward(&x, &w, &g, &dy, true);
            let dx = dx.unwrap();
            let objective = |x: &Activation<f64>, w: &[f64]| -> f64 {
                conv_forward(x, w, &g).data.iter().zip(&r).map(|(a, b)| a * b).sum()
            };
            for i in 0..w.len() {
                let mut wp = w.clone();
                wp[i] += 1e-6;
                let mut wm = w.clone();
                wm[i] -= 1e-6;
                let num = (objective(&x, &wp) - objective(&x, &wm)) / 2e-6;
                assert!((num - dw[i]).abs() < 1e-6, "dw k={k} s={s} h={h} i={i}: {num} vs {}", dw[i]);
            }
            for i in 0..x.data.len() {
                let mut xp = x.clone();
                xp.data[i] += 1e-6;
                let mut xm = x.clone();
                xm.data[i] -= 1e-6;
                let num = (objective(&xp, &w) - objective(&xm, &w)) / 2e-6;
                assert!((num - dx.data[i]).abs() < 1e-6, "dx k={k} s={s} h={h} i={i}");
            }
        }
    }

    #[test]
    fn matmul_transposes() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0f64, 0.0, 2.0, 1.0, 0.0, 1.0];
        let mut c = [0.0f64; 4];
        matmul(MatRef::new(&a, 2, 3), MatRef::new(&b, 3, 2), &mut c, 0.0);
        assert_eq!(c, [5.0, 5.0, 14.0, 11.0]);
        let mut ct = [0.0f64; 4];
        matmul(MatRef::new(&b, 3, 2).t(), MatRef::new(&a, 2, 3).t(), &mut ct, 0.0);
        assert_eq!(ct, [5.0, 14.0, 5.0, 11.0]);
    }
}
