//! Pointwise and normalization layers with their backward rules.

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn relu_in_place<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `g` where the ReLU input was not positive.
pub fn relu_backward_in_place<T: Scalar>(input: &[T], g: &mut [T]) {
    for (gv, &x) in g.iter_mut().zip(input) {
        if x <= T::zero() {
            *gv = T::zero();
        }
    }
}

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(x: &Tensor4<T>, gout: &Tensor4<T>) -> Tensor4<T> {
    let mut g = gout.clone();
    relu_backward_in_place(&x.data, &mut g.data);
    g
}

/// Per-channel standardized values and inverse standard deviations kept
/// for the backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<f64>,
}

/// Single-sample instance normalization of `x[c, plane]` with affine
/// `scale`/`shift`.
pub fn instance_norm_sample<T: Scalar>(
    x: &[T],
    channels: usize,
    scale: &[T],
    shift: &[T],
) -> (Vec<T>, NormCache<T>) {
    let plane = x.len() / channels;
    let mut out = vec![T::zero(); x.len()];
    let mut normalized = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(channels);
    for c in 0..channels {
        let xc = &x[c * plane..(c + 1) * plane];
        let mean = xc.iter().map(|v| v.wide()).sum::<f64>() / plane as f64;
        let var = xc.iter().map(|v| (v.wide() - mean).powi(2)).sum::<f64>() / plane as f64;
        let inv = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
        inv_std.push(inv);
        let (s, b) = (scale[c], shift[c]);
        for i in 0..plane {
            let y = T::of((xc[i].wide() - mean) * inv);
            normalized[c * plane + i] = y;
            out[c * plane + i] = s * y + b;
        }
    }
    (out, NormCache { normalized, inv_std })
}

/// Backward of [`instance_norm_sample`]; accumulates `dscale`/`dshift`.
pub fn instance_norm_sample_backward<T: Scalar>(
    cache: &NormCache<T>,
    channels: usize,
    scale: &[T],
    gout: &[T],
    dscale: &mut [T],
    dshift: &mut [T],
) -> Vec<T> {
    let plane = gout.len() / channels;
    let mut dx = vec![T::zero(); gout.len()];
    for c in 0..channels {
        let y = &cache.normalized[c * plane..(c + 1) * plane];
        let g = &gout[c * plane..(c + 1) * plane];
        let s = scale[c].wide();
        let (mut sum_g, mut sum_gy) = (0.0, 0.0);
        for (gv, yv) in g.iter().zip(y) {
            sum_g += gv.wide();
            sum_gy += gv.wide() * yv.wide();
        }
        dscale[c] = dscale[c] + T::of(sum_gy);
        dshift[c] = dshift[c] + T::of(sum_g);
        let mean_g = s * sum_g / plane as f64;
        let mean_gy = s * sum_gy / plane as f64;
        let inv = cache.inv_std[c];
        for i in 0..plane {
            let gy = s * g[i].wide();
            dx[c * plane + i] = T::of(inv * (gy - mean_g - y[i].wide() * mean_gy));
        }
    }
    dx
}

fn check_affine<T>(x: &Tensor4<T>, scale: &[T], shift: &[T]) -> Result<()> {
    if scale.len() != x.channels || shift.len() != x.channels {
        return Err(NnError::Shape("affine terms must have one entry per channel".into()));
    }
    Ok(())
}

pub fn instance_norm<T: Scalar>(x: &Tensor4<T>, scale: &[T], shift: &[T]) -> Result<Tensor4<T>> {
    check_affine(x, scale, shift)?;
    let mut data = Vec::with_capacity(x.data.len());
    for b in 0..x.batch {
        data.extend(instance_norm_sample(x.sample(b), x.channels, scale, shift).0);
    }
    Tensor4::from_vec(x.batch, x.channels, x.rows, x.cols, data)
}

/// Returns `(dx, dscale, dshift)`.
pub fn instance_norm_backward<T: Scalar>(
    x: &Tensor4<T>,
    scale: &[T],
    shift: &[T],
    gout: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    check_affine(x, scale, shift)?;
    x.ensure_shape(gout)?;
    let mut dscale = vec![T::zero(); x.channels];
    let mut dshift = vec![T::zero(); x.channels];
    let mut dx = Vec::with_capacity(x.data.len());
    for b in 0..x.batch {
        let (_, cache) = instance_norm_sample(x.sample(b), x.channels, scale, shift);
        dx.extend(instance_norm_sample_backward(
            &cache,
            x.channels,
            scale,
            gout.sample(b),
            &mut dscale,
            &mut dshift,
        ));
    }
    Ok((Tensor4::from_vec(x.batch, x.channels, x.rows, x.cols, dx)?, dscale, dshift))
}

/// `sign(x)·max(|x| − t, 0)` per real value.
#[inline]
pub fn shrink_real<T: Scalar>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

/// Soft threshold with learnable level `softplus(theta)`.
pub fn soft_threshold_learnable<T: Scalar>(x: &Tensor4<T>, theta: f64) -> Tensor4<T> {
    let t = T::of(softplus(theta));
    x.map(|v| shrink_real(v, t))
}

/// Backward of the learnable soft threshold on a slice: overwrites `g` with
/// the input gradient and returns `∂L/∂t` (the threshold, not `theta`).
pub fn soft_threshold_backward_in_place<T: Scalar>(input: &[T], t: T, g: &mut [T]) -> f64 {
    let mut dt = 0.0;
    for (gv, &x) in g.iter_mut().zip(input) {
        if x > t {
            dt -= gv.wide();
        } else if x < -t {
            dt += gv.wide();
        } else {
            *gv = T::zero();
        }
    }
    dt
}

/// Returns `(dx, dtheta)`.
pub fn soft_threshold_learnable_backward<T: Scalar>(
    x: &Tensor4<T>,
    theta: f64,
    gout: &Tensor4<T>,
) -> Result<(Tensor4<T>, f64)> {
    x.ensure_shape(gout)?;
    let mut g = gout.clone();
    let dt = soft_threshold_backward_in_place(&x.data, T::of(softplus(theta)), &mut g.data);
    Ok((g, dt * sigmoid(theta)))
}
