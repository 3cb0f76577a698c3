//! 2D cross-correlation and its transpose via im2col and GEMM.
//!
//! Kernels are stored `[c_out, c_in, k, k]` for convolutions and
//! `[c_in, c_out, k, k]` for transposed convolutions. Padding is always
//! `(k − 1)/2`.

use crate::error::{NnError, Result};
use crate::scalar::{gemm, Mat, Scalar};
use crate::tensor::Tensor4;

/// Geometry of a convolution from an `h × w` input to an `ho × wo` output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, h: usize, w: usize, k: usize, stride: usize) -> Result<Self> {
        if k % 2 == 0 || k == 0 {
            return Err(NnError::invalid("kernel", format!("size must be odd, got {k}")));
        }
        if !(stride == 1 || stride == 2) {
            return Err(NnError::invalid("stride", format!("must be 1 or 2, got {stride}")));
        }
        if h == 0 || w == 0 || channels == 0 {
            return Err(NnError::Shape("empty convolution input".into()));
        }
        let pad = (k - 1) / 2;
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Ok(Self {
            channels,
            h,
            w,
            k,
            stride,
            pad,
            ho,
            wo,
        })
    }

    #[inline]
    pub fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    #[inline]
    pub fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    #[inline]
    pub fn in_plane(&self) -> usize {
        self.h * self.w
    }
}

/// Unfolds `x[c, h, w]` into `col[c·k·k, ho·wo]`.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let p = g.out_plane();
    for ci in 0..g.channels {
        let xc = &x[ci * g.in_plane()..(ci + 1) * g.in_plane()];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = &mut col[((ci * g.k + ki) * g.k + kj) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `col` back into `x` (which is zeroed).
pub(crate) fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, x: &mut [T]) {
    x.fill(T::zero());
    let p = g.out_plane();
    for ci in 0..g.channels {
        let xc = &mut x[ci * g.in_plane()..(ci + 1) * g.in_plane()];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = &col[((ci * g.k + ki) * g.k + kj) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in row[oy * g.wo..(oy + 1) * g.wo].iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (o, &b) in bias.iter().enumerate() {
        out[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v = *v + b);
    }
}

fn accumulate_bias_grad<T: Scalar>(gout: &[T], plane: usize, db: &mut [T]) {
    for (o, d) in db.iter_mut().enumerate() {
        let s: f64 = gout[o * plane..(o + 1) * plane].iter().map(|v| v.wide()).sum();
        *d = *d + T::of(s);
    }
}

/// Single-sample convolution: `x[c_in, h, w] → out[c_out, ho, wo]`.
pub fn conv2d_sample<T: Scalar>(x: &[T], g: &ConvGeom, weight: &[T], bias: &[T], c_out: usize) -> Vec<T> {
    debug_assert_eq!(weight.len(), c_out * g.col_rows());
    let mut col = vec![T::zero(); g.col_rows() * g.out_plane()];
    im2col(x, g, &mut col);
    let mut out = vec![T::zero(); c_out * g.out_plane()];
    gemm(
        Mat::new(weight, c_out, g.col_rows()),
        Mat::new(&col, g.col_rows(), g.out_plane()),
        T::zero(),
        &mut out,
    );
    add_bias(&mut out, bias, g.out_plane());
    out
}

/// Backward of [`conv2d_sample`]: accumulates into `dw`/`db` and returns `dx`.
pub fn conv2d_sample_backward<T: Scalar>(
    x: &[T],
    g: &ConvGeom,
    weight: &[T],
    c_out: usize,
    gout: &[T],
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    let (cr, p) = (g.col_rows(), g.out_plane());
    let mut col = vec![T::zero(); cr * p];
    im2col(x, g, &mut col);
    gemm(Mat::new(gout, c_out, p), Mat::t(&col, p, cr), T::one(), dw);
    accumulate_bias_grad(gout, p, db);
    if !need_dx {
        return None;
    }
    let mut dcol = vec![T::zero(); cr * p];
    gemm(Mat::t(weight, cr, c_out), Mat::new(gout, c_out, p), T::zero(), &mut dcol);
    let mut dx = vec![T::zero(); g.channels * g.in_plane()];
    col2im(&dcol, g, &mut dx);
    Some(dx)
}

/// Geometry of the stride-`s` convolution whose adjoint maps an `h × w`
/// input to `s·h × s·w` with `c_out` channels.
pub fn tconv_geom(c_out: usize, h: usize, w: usize, k: usize, stride: usize) -> Result<ConvGeom> {
    let g = ConvGeom::new(c_out, h * stride, w * stride, k, stride)?;
    if g.ho != h || g.wo != w {
        return Err(NnError::Shape(format!(
            "transposed convolution cannot map {h}x{w} to {}x{}",
            h * stride,
            w * stride
        )));
    }
    Ok(g)
}

/// Single-sample transposed convolution: `x[c_in, h, w] → out[c_out, s·h, s·w]`,
/// the adjoint of the stride-`s` convolution described by `g` (plus bias).
pub fn tconv2d_sample<T: Scalar>(x: &[T], g: &ConvGeom, weight: &[T], bias: &[T], c_in: usize) -> Vec<T> {
    let (cr, p) = (g.col_rows(), g.out_plane());
    debug_assert_eq!(weight.len(), c_in * cr);
    let mut col = vec![T::zero(); cr * p];
    gemm(Mat::t(weight, cr, c_in), Mat::new(x, c_in, p), T::zero(), &mut col);
    let mut out = vec![T::zero(); g.channels * g.in_plane()];
    col2im(&col, g, &mut out);
    add_bias(&mut out, bias, g.in_plane());
    out
}

pub fn tconv2d_sample_backward<T: Scalar>(
    x: &[T],
    g: &ConvGeom,
    weight: &[T],
    c_in: usize,
    gout: &[T],
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    let (cr, p) = (g.col_rows(), g.out_plane());
    let mut col = vec![T::zero(); cr * p];
    im2col(gout, g, &mut col);
    gemm(Mat::new(x, c_in, p), Mat::t(&col, p, cr), T::one(), dw);
    accumulate_bias_grad(gout, g.in_plane(), db);
    if !need_dx {
        return None;
    }
    let mut dx = vec![T::zero(); c_in * p];
    gemm(Mat::new(weight, c_in, cr), Mat::new(&col, cr, p), T::zero(), &mut dx);
    Some(dx)
}

/// Kernel and bias of one convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

/// Gradients matching [`ConvParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn check(&self) -> Result<()> {
        if self.weight.len() != self.c_in * self.c_out * self.k * self.k || self.bias.len() != self.c_out {
            return Err(NnError::Shape("kernel or bias size does not match layer shape".into()));
        }
        Ok(())
    }

    fn zero_grads(&self) -> ConvGrads<T> {
        ConvGrads {
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }
}

/// Batched convolution with `(k−1)/2` zero padding.
pub fn conv2d<T: Scalar>(x: &Tensor4<T>, p: &ConvParams<T>, stride: usize) -> Result<Tensor4<T>> {
    p.check()?;
    if x.channels != p.c_in {
        return Err(NnError::Shape(format!("expected {} input channels, got {}", p.c_in, x.channels)));
    }
    let g = ConvGeom::new(p.c_in, x.rows, x.cols, p.k, stride)?;
    let mut data = Vec::with_capacity(x.batch * p.c_out * g.out_plane());
    for b in 0..x.batch {
        data.extend(conv2d_sample(x.sample(b), &g, &p.weight, &p.bias, p.c_out));
    }
    Tensor4::from_vec(x.batch, p.c_out, g.ho, g.wo, data)
}

/// Gradients of a batched [`conv2d`] given the output gradient.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    p: &ConvParams<T>,
    stride: usize,
    gout: &Tensor4<T>,
) -> Result<(Tensor4<T>, ConvGrads<T>)> {
    let g = ConvGeom::new(p.c_in, x.rows, x.cols, p.k, stride)?;
    if gout.shape() != [x.batch, p.c_out, g.ho, g.wo] {
        return Err(NnError::Shape("output gradient shape mismatch".into()));
    }
    let mut grads = p.zero_grads();
    let mut dx = Vec::with_capacity(x.data.len());
    for b in 0..x.batch {
        let d = conv2d_sample_backward(
            x.sample(b),
            &g,
            &p.weight,
            p.c_out,
            gout.sample(b),
            &mut grads.weight,
            &mut grads.bias,
            true,
        );
        dx.extend(d.unwrap());
    }
    Ok((Tensor4::from_vec(x.batch, x.channels, x.rows, x.cols, dx)?, grads))
}

/// Batched stride-`stride` transposed convolution; kernel stored
/// `[c_in, c_out, k, k]`, output `stride×` larger in each spatial dimension.
pub fn tconv2d<T: Scalar>(x: &Tensor4<T>, p: &ConvParams<T>, stride: usize) -> Result<Tensor4<T>> {
    p.check()?;
    if x.channels != p.c_in {
        return Err(NnError::Shape(format!("expected {} input channels, got {}", p.c_in, x.channels)));
    }
    let g = tconv_geom(p.c_out, x.rows, x.cols, p.k, stride)?;
    let mut data = Vec::with_capacity(x.batch * p.c_out * g.in_plane());
    for b in 0..x.batch {
        data.extend(tconv2d_sample(x.sample(b), &g, &p.weight, &p.bias, p.c_in));
    }
    Tensor4::from_vec(x.batch, p.c_out, g.h, g.w, data)
}

pub fn tconv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    p: &ConvParams<T>,
    stride: usize,
    gout: &Tensor4<T>,
) -> Result<(Tensor4<T>, ConvGrads<T>)> {
    let g = tconv_geom(p.c_out, x.rows, x.cols, p.k, stride)?;
    if gout.shape() != [x.batch, p.c_out, g.h, g.w] {
        return Err(NnError::Shape("output gradient shape mismatch".into()));
    }
    let mut grads = p.zero_grads();
    let mut dx = Vec::with_capacity(x.data.len());
    for b in 0..x.batch {
        let d = tconv2d_sample_backward(
            x.sample(b),
            &g,
            &p.weight,
            p.c_in,
            gout.sample(b),
            &mut grads.weight,
            &mut grads.bias,
            true,
        );
        dx.extend(d.unwrap());
    }
    Ok((Tensor4::from_vec(x.batch, x.channels, x.rows, x.cols, dx)?, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct-loop cross-correlation with zero padding.
    fn naive_conv(x: &[f64], c_in: usize, h: usize, w: usize, wt: &[f64], b: &[f64], c_out: usize, k: usize, s: usize) -> Vec<f64> {
        let pad = (k - 1) / 2;
        let ho = (h + 2 * pad - k) / s + 1;
        let wo = (w + 2 * pad - k) / s + 1;
        let mut out = vec![0.0; c_out * ho * wo];
        for o in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[o];
                    for c in 0..c_in {
                        for i in 0..k {
                            for j in 0..k {
                                let iy = (oy * s + i) as isize - pad as isize;
                                let ix = (ox * s + j) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += wt[((o * c_in + c) * k + i) * k + j] * x[(c * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_loop() {
        for &(k, s, h, w) in &[(3, 1, 7, 5), (3, 2, 8, 8), (7, 2, 9, 6), (1, 1, 4, 4)] {
            let (ci, co) = (3, 4);
            let x = rand_vec(ci * h * w, 1);
            let wt = rand_vec(co * ci * k * k, 2);
            let b = rand_vec(co, 3);
            let p = ConvParams { weight: wt.clone(), bias: b.clone(), c_in: ci, c_out: co, k };
            let got = conv2d(&Tensor4::from_vec(1, ci, h, w, x.clone()).unwrap(), &p, s).unwrap();
            let want = naive_conv(&x, ci, h, w, &wt, &b, co, k, s);
            for (a, b) in got.data.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_and_box_kernels() {
        let x = Tensor4::from_vec(1, 1, 3, 3, rand_vec(9, 4)).unwrap();
        let id = ConvParams { weight: vec![1.0], bias: vec![0.0], c_in: 1, c_out: 1, k: 1 };
        assert_eq!(conv2d(&x, &id, 1).unwrap(), x);
        let ones = Tensor4::from_vec(1, 1, 5, 5, vec![1.0; 25]).unwrap();
        let boxk = ConvParams { weight: vec![1.0; 9], bias: vec![0.0], c_in: 1, c_out: 1, k: 3 };
        let y = conv2d(&ones, &boxk, 1).unwrap();
        assert_eq!(y.data[2 * 5 + 2], 9.0);
        assert_eq!(y.data[0], 4.0);
    }

    #[test]
    fn transposed_is_adjoint_of_strided() {
        for &(k, h) in &[(3usize, 4usize), (3, 8), (5, 6)] {
            let (cs, cb) = (3, 2); // small-side and big-side channels
            let wt = rand_vec(cs * cb * k * k, 5);
            let conv = ConvParams { weight: wt.clone(), bias: vec![0.0; cs], c_in: cb, c_out: cs, k };
            let tconv = ConvParams { weight: wt, bias: vec![0.0; cb], c_in: cs, c_out: cb, k };
            let big = Tensor4::from_vec(2, cb, 2 * h, 2 * h, rand_vec(2 * cb * 4 * h * h, 6)).unwrap();
            let small = Tensor4::from_vec(2, cs, h, h, rand_vec(2 * cs * h * h, 7)).unwrap();
            let lhs = conv2d(&big, &conv, 2).unwrap().dot(&small);
            let rhs = big.dot(&tconv2d(&small, &tconv, 2).unwrap());
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn zero_input_gives_bias() {
        let p = ConvParams { weight: rand_vec(2 * 3 * 9, 8), bias: vec![0.5, -1.0, 2.0], c_in: 2, c_out: 3, k: 3 };
        let y = tconv2d(&Tensor4::zeros(1, 2, 4, 4), &p, 2).unwrap();
        assert_eq!(y.shape(), [1, 3, 8, 8]);
        assert!(y.data[..64].iter().all(|&v| v == 0.5));
        assert!(y.data[128..].iter().all(|&v| v == 2.0));
    }

    #[test]
    fn shape_errors() {
        let p = ConvParams { weight: vec![0.0; 9], bias: vec![0.0], c_in: 1, c_out: 1, k: 3 };
        assert!(conv2d(&Tensor4::<f64>::zeros(1, 2, 4, 4), &p, 1).is_err());
        assert!(conv2d(&Tensor4::<f64>::zeros(1, 1, 4, 4), &p, 3).is_err());
        let even = ConvParams { weight: vec![0.0; 4], bias: vec![0.0], c_in: 1, c_out: 1, k: 2 };
        assert!(conv2d(&Tensor4::<f64>::zeros(1, 1, 4, 4), &even, 1).is_err());
    }
}
