//! Complex-valued primitives on the 2-channel (real, imaginary) view, with
//! gradients in the `∂L/∂re + j·∂L/∂im` convention.

use handsar_core::fft;
use handsar_core::imaging::PhaseTerm;
use num_complex::Complex;

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub type C<T> = Complex<T>;

/// Offset added inside `|z| = sqrt(re² + im² + AMP_EPS)`.
pub const AMP_EPS: f64 = 1e-12;

/// Threshold below which the unit-modulus projection returns `1 + 0j`.
pub const PROJECT_EPS: f64 = 1e-12;

#[inline]
pub fn czero<T: Scalar>() -> C<T> {
    C::new(T::zero(), T::zero())
}

/// Splits complex samples into a `[re-plane, im-plane]` buffer.
pub fn to_planar<T: Scalar>(z: &[C<T>]) -> Vec<T> {
    let mut out = Vec::with_capacity(2 * z.len());
    out.extend(z.iter().map(|v| v.re));
    out.extend(z.iter().map(|v| v.im));
    out
}

pub fn from_planar<T: Scalar>(x: &[T]) -> Vec<C<T>> {
    let n = x.len() / 2;
    (0..n).map(|i| C::new(x[i], x[n + i])).collect()
}

fn sample_complex<T: Scalar>(x: &Tensor4<T>, b: usize) -> Vec<C<T>> {
    from_planar(x.sample(b))
}

fn check_two_channel<T>(x: &Tensor4<T>) -> Result<()> {
    if x.channels != 2 {
        return Err(NnError::Shape(format!(
            "complex view needs 2 channels, got {}",
            x.channels
        )));
    }
    Ok(())
}

fn from_samples<T: Scalar>(like: &Tensor4<T>, samples: Vec<Vec<C<T>>>) -> Tensor4<T> {
    let data = samples.iter().flat_map(|s| to_planar(s)).collect();
    Tensor4::from_vec(like.batch, 2, like.rows, like.cols, data).expect("shape preserved")
}

/// `IFFT2[FFT2[x] ⊙ mask]` on an `rows × cols` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralOp<T> {
    pub rows: usize,
    pub cols: usize,
    pub mask: Vec<C<T>>,
}

impl<T: Scalar> SpectralOp<T> {
    pub fn from_term(term: &PhaseTerm) -> Self {
        let (rows, cols) = term.dims();
        Self {
            rows,
            cols,
            mask: term
                .grid
                .as_slice()
                .iter()
                .map(|v| C::new(T::of(v.re), T::of(v.im)))
                .collect(),
        }
    }

    pub fn apply(&self, x: &[C<T>]) -> Vec<C<T>> {
        let mut out = x.to_vec();
        fft::spectral_filter_in_place(&mut out, self.rows, self.cols, &self.mask);
        out
    }

    /// The conjugate-adjoint operator (same form with the conjugated mask).
    pub fn adjoint(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            mask: self.mask.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn apply_tensor(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        check_two_channel(x)?;
        if (x.rows, x.cols) != (self.rows, self.cols) {
            return Err(NnError::Shape(format!(
                "operator is {}x{}, input is {}x{}",
                self.rows, self.cols, x.rows, x.cols
            )));
        }
        let samples = (0..x.batch).map(|b| self.apply(&sample_complex(x, b))).collect();
        Ok(from_samples(x, samples))
    }

    /// Gradient of the input given the output gradient.
    pub fn backward_tensor(&self, gout: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.adjoint().apply_tensor(gout)
    }
}

/// The operator pair `I(·, M)` and `G(·, M̄)` at working precision.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorPair<T> {
    pub image: SpectralOp<T>,
    pub generate: SpectralOp<T>,
}

impl<T: Scalar> OperatorPair<T> {
    pub fn new(m: &PhaseTerm) -> Self {
        Self {
            image: SpectralOp::from_term(m),
            generate: SpectralOp::from_term(&m.conj()),
        }
    }
}

/// Elementwise `a ⊙ b`.
pub fn complex_mul<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_two_channel(a)?;
    a.ensure_shape(b)?;
    let samples = (0..a.batch)
        .map(|i| {
            sample_complex(a, i)
                .iter()
                .zip(sample_complex(b, i))
                .map(|(x, y)| x * y)
                .collect()
        })
        .collect();
    Ok(from_samples(a, samples))
}

/// Gradients `(g_a, g_b) = (g ⊙ conj(b), g ⊙ conj(a))` of [`complex_mul`].
pub fn complex_mul_backward<T: Scalar>(
    a: &Tensor4<T>,
    b: &Tensor4<T>,
    gout: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    check_two_channel(a)?;
    a.ensure_shape(b)?;
    a.ensure_shape(gout)?;
    let mut ga = Vec::with_capacity(a.batch);
    let mut gb = Vec::with_capacity(a.batch);
    for i in 0..a.batch {
        let (za, zb, g) = (sample_complex(a, i), sample_complex(b, i), sample_complex(gout, i));
        ga.push(g.iter().zip(&zb).map(|(g, y)| g * y.conj()).collect());
        gb.push(g.iter().zip(&za).map(|(g, x)| g * x.conj()).collect());
    }
    Ok((from_samples(a, ga), from_samples(a, gb)))
}

/// Elementwise `conj(a) ⊙ b`.
pub fn conj_mul<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_two_channel(a)?;
    a.ensure_shape(b)?;
    let samples = (0..a.batch)
        .map(|i| {
            sample_complex(a, i)
                .iter()
                .zip(sample_complex(b, i))
                .map(|(x, y)| x.conj() * y)
                .collect()
        })
        .collect();
    Ok(from_samples(a, samples))
}

/// Gradients `(g_a, g_b) = (conj(g) ⊙ b, g ⊙ a)` of [`conj_mul`].
pub fn conj_mul_backward<T: Scalar>(
    a: &Tensor4<T>,
    b: &Tensor4<T>,
    gout: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    check_two_channel(a)?;
    a.ensure_shape(b)?;
    a.ensure_shape(gout)?;
    let mut ga = Vec::with_capacity(a.batch);
    let mut gb = Vec::with_capacity(a.batch);
    for i in 0..a.batch {
        let (za, zb, g) = (sample_complex(a, i), sample_complex(b, i), sample_complex(gout, i));
        ga.push(g.iter().zip(&zb).map(|(g, y)| g.conj() * y).collect());
        gb.push(g.iter().zip(&za).map(|(g, x)| g * x).collect());
    }
    Ok((from_samples(a, ga), from_samples(a, gb)))
}

/// `z / |z|`, with near-zero cells mapped to `1 + 0j`.
#[inline]
pub fn project_one<T: Scalar>(z: C<T>) -> C<T> {
    let a = z.norm();
    if a.wide() < PROJECT_EPS {
        C::new(T::one(), T::zero())
    } else {
        z / a
    }
}

/// Input gradient of [`project_one`]: `(g − u·Re(conj(u)·g)) / |z|`.
#[inline]
pub fn project_one_backward<T: Scalar>(z: C<T>, g: C<T>) -> C<T> {
    let a = z.norm();
    if a.wide() < PROJECT_EPS {
        return czero();
    }
    let u = z / a;
    let radial = (u.conj() * g).re;
    (g - u * radial) / a
}

pub fn project_unit_modulus<T: Scalar>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_two_channel(x)?;
    let samples = (0..x.batch)
        .map(|i| sample_complex(x, i).into_iter().map(project_one).collect())
        .collect();
    Ok(from_samples(x, samples))
}

pub fn project_unit_modulus_backward<T: Scalar>(x: &Tensor4<T>, gout: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_two_channel(x)?;
    x.ensure_shape(gout)?;
    let samples = (0..x.batch)
        .map(|i| {
            sample_complex(x, i)
                .into_iter()
                .zip(sample_complex(gout, i))
                .map(|(z, g)| project_one_backward(z, g))
                .collect()
        })
        .collect();
    Ok(from_samples(x, samples))
}

#[inline]
fn soft_abs(z: C<f64>) -> f64 {
    (z.re * z.re + z.im * z.im + AMP_EPS).sqrt()
}

#[inline]
fn widen<T: Scalar>(z: C<T>) -> C<f64> {
    C::new(z.re.wide(), z.im.wide())
}

/// Mean of `(|a| − |b|)²` over cells, with the softened magnitude.
pub fn amplitude_mse_slice<T: Scalar>(a: &[C<T>], b: &[C<T>]) -> f64 {
    let n = a.len() as f64;
    a.iter()
        .zip(b)
        .map(|(x, y)| (soft_abs(widen(*x)) - soft_abs(widen(*y))).powi(2))
        .sum::<f64>()
        / n
}

/// Gradient of [`amplitude_mse_slice`] with respect to `a`, scaled by `weight`.
pub fn amplitude_mse_grad_slice<T: Scalar>(a: &[C<T>], b: &[C<T>], weight: f64) -> Vec<C<T>> {
    let n = a.len() as f64;
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let xw = widen(*x);
            let ax = soft_abs(xw);
            let coef = weight * 2.0 * (ax - soft_abs(widen(*y))) / (n * ax);
            C::new(T::of(coef * xw.re), T::of(coef * xw.im))
        })
        .collect()
}

/// Amplitude MSE averaged over every cell of the batch.
pub fn amplitude_mse<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<f64> {
    check_two_channel(a)?;
    a.ensure_shape(b)?;
    let total: f64 = (0..a.batch)
        .map(|i| amplitude_mse_slice(&sample_complex(a, i), &sample_complex(b, i)))
        .sum();
    Ok(total / a.batch as f64)
}

pub fn amplitude_mse_backward<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_two_channel(a)?;
    a.ensure_shape(b)?;
    let w = 1.0 / a.batch as f64;
    let samples = (0..a.batch)
        .map(|i| amplitude_mse_grad_slice(&sample_complex(a, i), &sample_complex(b, i), w))
        .collect();
    Ok(from_samples(a, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use handsar_core::geometry::{wavenumber, ApertureConfig};
    use handsar_core::grid::ComplexGrid;
    use handsar_core::imaging::{build_phase_term, op_generate, op_image};
    use handsar_core::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(batch: usize, n: usize, seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..batch * 2 * n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor4::from_vec(batch, 2, n, n, data).unwrap()
    }

    fn term(n: usize) -> PhaseTerm {
        let ap = ApertureConfig {
            nx: n,
            ny: n,
            dx: 1e-3,
            dy: 1e-3,
            z_target: 0.3,
        };
        build_phase_term(&ap, wavenumber(77e9), 0.3).unwrap()
    }

    #[test]
    fn spectral_ops_match_imaging_module_bitwise() {
        let m = term(8);
        let ops = OperatorPair::<f64>::new(&m);
        let x = rand_tensor(1, 8, 1);
        let grid = ComplexGrid::new(8, 8, from_planar(x.sample(0)).iter().map(|v| Complex64::new(v.re, v.im)).collect()).unwrap();
        let a = ops.image.apply_tensor(&x).unwrap();
        let b = ops.generate.apply_tensor(&x).unwrap();
        let want_a = op_image(&grid, &m).unwrap();
        let want_b = op_generate(&grid, &m.conj()).unwrap();
        assert_eq!(from_planar(a.sample(0)), want_a.as_slice());
        assert_eq!(from_planar(b.sample(0)), want_b.as_slice());
    }

    #[test]
    fn spectral_adjoint_identity() {
        let ops = OperatorPair::<f64>::new(&term(8));
        let x = rand_tensor(2, 8, 2);
        let y = rand_tensor(2, 8, 3);
        // real inner product of the 2-channel views is Re⟨·,·⟩ of the complex fields
        let lhs = ops.image.apply_tensor(&x).unwrap().dot(&y);
        let rhs = x.dot(&ops.image.backward_tensor(&y).unwrap());
        assert!((lhs - rhs).abs() < 1e-10);
        // I backward is G forward
        assert_eq!(ops.image.backward_tensor(&y).unwrap(), ops.generate.apply_tensor(&y).unwrap());
        let z = Tensor4::<f64>::zeros(1, 2, 8, 8);
        assert_eq!(ops.image.apply_tensor(&z).unwrap(), z);
    }

    #[test]
    fn multiply_adjoints() {
        let (a, b, y) = (rand_tensor(1, 4, 4), rand_tensor(1, 4, 5), rand_tensor(1, 4, 6));
        let (ga, gb) = complex_mul_backward(&a, &b, &y).unwrap();
        // linear in a for fixed b: ⟨a⊙b, y⟩ = ⟨a, g_a⟩
        let lhs = complex_mul(&a, &b).unwrap().dot(&y);
        assert!((lhs - a.dot(&ga)).abs() < 1e-12);
        assert!((lhs - b.dot(&gb)).abs() < 1e-12);
        let (ca, cb) = conj_mul_backward(&a, &b, &y).unwrap();
        let l2 = conj_mul(&a, &b).unwrap().dot(&y);
        assert!((l2 - a.dot(&ca)).abs() < 1e-12);
        assert!((l2 - b.dot(&cb)).abs() < 1e-12);
    }

    #[test]
    fn projection_contract() {
        let x = Tensor4::from_vec(1, 2, 1, 3, vec![2.0, 0.0, -3.0, 0.0, 0.0, 4.0]).unwrap();
        let p = project_unit_modulus(&x).unwrap();
        assert_eq!(p.data, vec![1.0, 1.0, -0.6, 0.0, 0.0, 0.8]);
    }

    #[test]
    fn amplitude_loss_properties() {
        let a = rand_tensor(2, 4, 7);
        assert!(amplitude_mse(&a, &a).unwrap() <= 1e-12);
        let rot = C::from_polar(1.0, 0.83);
        let samples = (0..2).map(|i| sample_complex(&a, i).iter().map(|z| z * rot).collect()).collect();
        let r = from_samples(&a, samples);
        assert!(amplitude_mse(&r, &a).unwrap() <= 1e-12);

        let b = rand_tensor(2, 4, 8);
        let mut acc = 0.0;
        for i in 0..2 * 16 {
            let (s, k) = (i / 16, i % 16);
            let re = a.data[s * 32 + k];
            let im = a.data[s * 32 + 16 + k];
            let br = b.data[s * 32 + k];
            let bi = b.data[s * 32 + 16 + k];
            acc += ((re * re + im * im + 1e-12).sqrt() - (br * br + bi * bi + 1e-12).sqrt()).powi(2);
        }
        assert!((amplitude_mse(&a, &b).unwrap() - acc / 32.0).abs() < 1e-10);
    }
}
