//! Central-difference verification of hand-written gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

/// Maximum relative error tolerated for 64-bit checks.
pub const TOL_F64: f64 = 1e-4;
/// Maximum relative error tolerated for 32-bit checks.
pub const TOL_F32: f64 = 5e-3;

pub fn tolerance<T: Scalar>() -> f64 {
    if T::BITS == 64 {
        TOL_F64
    } else {
        TOL_F32
    }
}

/// Default finite-difference step for the precision.
pub fn default_eps<T: Scalar>() -> f64 {
    if T::BITS == 64 {
        1e-6
    } else {
        1e-3
    }
}

/// Compares `⟨grad, d⟩` with `(f(x + εd) − f(x − εd)) / 2ε` along `n_dirs`
/// random unit directions and returns the largest relative error. The
/// analytic side uses the perturbation actually representable in `T`.
///
/// At 32 bits each direction is the normalized sum of the unit gradient and
/// a random unit vector, which keeps the directional derivative well above
/// the rounding noise of the objective.
///
/// `f` evaluates the scalar objective at a point; `grad` is the analytic
/// gradient at `x0`.
pub fn gradient_check<T: Scalar>(
    f: impl Fn(&[T]) -> f64,
    x0: &[T],
    grad: &[T],
    eps: f64,
    n_dirs: usize,
    seed: u64,
) -> f64 {
    assert_eq!(x0.len(), grad.len(), "gradient length must match the point");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let gnorm = grad.iter().map(|g| g.wide().powi(2)).sum::<f64>().sqrt();
    for _ in 0..n_dirs {
        let mut d: Vec<f64> = (0..x0.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut d);
        if T::BITS < 64 && gnorm > 0.0 {
            d.iter_mut().zip(grad).for_each(|(v, g)| *v += g.wide() / gnorm);
            normalize(&mut d);
        }
        let step = |sign: f64| -> Vec<T> {
            x0.iter()
                .zip(&d)
                .map(|(x, dv)| T::of(x.wide() + sign * eps * dv))
                .collect()
        };
        let (plus, minus) = (step(1.0), step(-1.0));
        let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
        let an: f64 = grad
            .iter()
            .zip(plus.iter().zip(&minus))
            .map(|(g, (p, m))| g.wide() * (p.wide() - m.wide()) / (2.0 * eps))
            .sum();
        let scale = fd.abs().max(an.abs()).max(1e-8);
        worst = worst.max((fd - an).abs() / scale);
    }
    worst
}

fn normalize(d: &mut [f64]) {
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    d.iter_mut().for_each(|v| *v /= norm);
}

/// Random projection weights `w` for turning a tensor-valued op into the
/// scalar objective `Σ w ⊙ op(x)`.
pub fn projection_weights<T: Scalar>(len: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| T::of(StandardNormal.sample(&mut rng)))
        .collect()
}

pub fn project<T: Scalar>(w: &[T], y: &[T]) -> f64 {
    w.iter().zip(y).map(|(a, b)| a.wide() * b.wide()).sum()
}
