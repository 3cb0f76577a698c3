//! Gradient-check suites over every primitive and the full unfolded model.

use handsar_core::geometry::ApertureConfig;
use handsar_core::imaging::build_phase_term;
use num_complex::Complex;

use crate::complex::{
    amplitude_mse, amplitude_mse_backward, complex_mul, complex_mul_backward, conj_mul, conj_mul_backward,
    project_unit_modulus, project_unit_modulus_backward, OperatorPair,
};
use crate::conv::{conv2d, conv2d_backward, tconv2d, tconv2d_backward, ConvParams};
use crate::gradcheck::{default_eps, gradient_check, project, projection_weights, tolerance};
use crate::layers::{
    instance_norm, instance_norm_backward, inverse_softplus, soft_threshold_learnable,
    soft_threshold_learnable_backward,
};
use crate::model::{IfnetArch, UnfoldingModel};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub bits: u32,
    pub rel_error: f64,
    pub tolerance: f64,
}

impl Check {
    fn new<T: Scalar>(name: &str, rel_error: f64) -> Self {
        Self {
            name: name.to_string(),
            bits: T::BITS,
            rel_error,
            tolerance: tolerance::<T>(),
        }
    }

    pub fn passed(&self) -> bool {
        self.rel_error < self.tolerance
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} ({} bit): relative error {:.3e}, tolerance {:.0e}",
            self.name, self.bits, self.rel_error, self.tolerance
        )
    }
}

const DIRS: usize = 6;

fn random_tensor<T: Scalar>(shape: [usize; 4], seed: u64) -> Tensor4<T> {
    let n = shape.iter().product();
    Tensor4::from_vec(shape[0], shape[1], shape[2], shape[3], projection_weights(n, seed)).expect("check fixture")
}

fn with_data<T: Scalar>(like: &Tensor4<T>, data: &[T]) -> Tensor4<T> {
    Tensor4::from_vec(like.batch, like.channels, like.rows, like.cols, data.to_vec()).expect("check fixture")
}

fn conv_layer<T: Scalar>(c_in: usize, c_out: usize, k: usize, seed: u64) -> ConvParams<T> {
    ConvParams {
        weight: projection_weights(c_in * c_out * k * k, seed),
        bias: projection_weights(c_out, seed + 1),
        c_in,
        c_out,
        k,
    }
}

fn check_conv<T: Scalar>(stride: usize, k: usize, out: &mut Vec<Check>) {
    let x = random_tensor::<T>([2, 3, 8, 8], 1);
    let p = conv_layer::<T>(3, 4, k, 2);
    let y = conv2d(&x, &p, stride).expect("check fixture");
    let w = projection_weights::<T>(y.data.len(), 3);
    let (dx, grads) = conv2d_backward(&x, &p, stride, &with_data(&y, &w)).expect("check fixture");
    let eps = default_eps::<T>();

    let fx = |v: &[T]| project(&w, &conv2d(&with_data(&x, v), &p, stride).expect("check fixture").data);
    out.push(Check::new::<T>("conv input", gradient_check(fx, &x.data, &dx.data, eps, DIRS, 4)));
    let fw = |v: &[T]| {
        let q = ConvParams { weight: v.to_vec(), ..p.clone() };
        project(&w, &conv2d(&x, &q, stride).expect("check fixture").data)
    };
    out.push(Check::new::<T>("conv weight", gradient_check(fw, &p.weight, &grads.weight, eps, DIRS, 5)));
    let fb = |v: &[T]| {
        let q = ConvParams { bias: v.to_vec(), ..p.clone() };
        project(&w, &conv2d(&x, &q, stride).expect("check fixture").data)
    };
    out.push(Check::new::<T>("conv bias", gradient_check(fb, &p.bias, &grads.bias, eps, DIRS, 6)));
}

fn check_tconv<T: Scalar>(out: &mut Vec<Check>) {
    let x = random_tensor::<T>([2, 4, 4, 4], 11);
    let p = conv_layer::<T>(4, 3, 3, 12);
    let y = tconv2d(&x, &p, 2).expect("check fixture");
    let w = projection_weights::<T>(y.data.len(), 13);
    let (dx, grads) = tconv2d_backward(&x, &p, 2, &with_data(&y, &w)).expect("check fixture");
    let eps = default_eps::<T>();

    let fx = |v: &[T]| project(&w, &tconv2d(&with_data(&x, v), &p, 2).expect("check fixture").data);
    out.push(Check::new::<T>("tconv input", gradient_check(fx, &x.data, &dx.data, eps, DIRS, 14)));
    let fw = |v: &[T]| {
        let q = ConvParams { weight: v.to_vec(), ..p.clone() };
        project(&w, &tconv2d(&x, &q, 2).expect("check fixture").data)
    };
    out.push(Check::new::<T>("tconv weight", gradient_check(fw, &p.weight, &grads.weight, eps, DIRS, 15)));
    let fb = |v: &[T]| {
        let q = ConvParams { bias: v.to_vec(), ..p.clone() };
        project(&w, &tconv2d(&x, &q, 2).expect("check fixture").data)
    };
    out.push(Check::new::<T>("tconv bias", gradient_check(fb, &p.bias, &grads.bias, eps, DIRS, 16)));
}

fn check_instance_norm<T: Scalar>(out: &mut Vec<Check>) {
    let x = random_tensor::<T>([2, 3, 6, 6], 21);
    let scale = projection_weights::<T>(3, 22);
    let shift = projection_weights::<T>(3, 23);
    let y = instance_norm(&x, &scale, &shift).expect("check fixture");
    let w = projection_weights::<T>(y.data.len(), 24);
    let (dx, ds, dh) = instance_norm_backward(&x, &scale, &shift, &with_data(&y, &w)).expect("check fixture");
    let eps = default_eps::<T>();

    let fx = |v: &[T]| project(&w, &instance_norm(&with_data(&x, v), &scale, &shift).expect("check fixture").data);
    out.push(Check::new::<T>("norm input", gradient_check(fx, &x.data, &dx.data, eps, DIRS, 25)));
    let fs = |v: &[T]| project(&w, &instance_norm(&x, v, &shift).expect("check fixture").data);
    out.push(Check::new::<T>("norm scale", gradient_check(fs, &scale, &ds, eps, DIRS, 26)));
    let fh = |v: &[T]| project(&w, &instance_norm(&x, &scale, v).expect("check fixture").data);
    out.push(Check::new::<T>("norm shift", gradient_check(fh, &shift, &dh, eps, DIRS, 27)));
}

fn check_soft_threshold<T: Scalar>(out: &mut Vec<Check>) {
    let x = random_tensor::<T>([1, 2, 8, 8], 31);
    let theta = inverse_softplus(0.3);
    let y = soft_threshold_learnable(&x, theta);
    let w = projection_weights::<T>(y.data.len(), 32);
    let (dx, dtheta) = soft_threshold_learnable_backward(&x, theta, &with_data(&y, &w)).expect("check fixture");
    let eps = default_eps::<T>();

    let fx = |v: &[T]| project(&w, &soft_threshold_learnable(&with_data(&x, v), theta).data);
    out.push(Check::new::<T>("threshold input", gradient_check(fx, &x.data, &dx.data, eps, DIRS, 33)));
    let ft = |v: &[T]| project(&w, &soft_threshold_learnable(&x, v[0].wide()).data);
    let err = gradient_check(ft, &[T::of(theta)], &[T::of(dtheta)], eps, 1, 34);
    out.push(Check::new::<T>("threshold level", err));
}

fn check_complex_products<T: Scalar>(out: &mut Vec<Check>) {
    let a = random_tensor::<T>([2, 2, 4, 4], 41);
    let b = random_tensor::<T>([2, 2, 4, 4], 42);
    let w = projection_weights::<T>(a.data.len(), 43);
    let gout = with_data(&a, &w);
    let eps = default_eps::<T>();

    let (ga, gb) = complex_mul_backward(&a, &b, &gout).expect("check fixture");
    let fa = |v: &[T]| project(&w, &complex_mul(&with_data(&a, v), &b).expect("check fixture").data);
    out.push(Check::new::<T>("mul lhs", gradient_check(fa, &a.data, &ga.data, eps, DIRS, 44)));
    let fb = |v: &[T]| project(&w, &complex_mul(&a, &with_data(&b, v)).expect("check fixture").data);
    out.push(Check::new::<T>("mul rhs", gradient_check(fb, &b.data, &gb.data, eps, DIRS, 45)));

    let (ga, gb) = conj_mul_backward(&a, &b, &gout).expect("check fixture");
    let fa = |v: &[T]| project(&w, &conj_mul(&with_data(&a, v), &b).expect("check fixture").data);
    out.push(Check::new::<T>("conj-mul lhs", gradient_check(fa, &a.data, &ga.data, eps, DIRS, 46)));
    let fb = |v: &[T]| project(&w, &conj_mul(&a, &with_data(&b, v)).expect("check fixture").data);
    out.push(Check::new::<T>("conj-mul rhs", gradient_check(fb, &b.data, &gb.data, eps, DIRS, 47)));
}

fn check_projection<T: Scalar>(out: &mut Vec<Check>) {
    let x = random_tensor::<T>([1, 2, 6, 6], 51);
    let y = project_unit_modulus(&x).expect("check fixture");
    let w = projection_weights::<T>(y.data.len(), 52);
    let dx = project_unit_modulus_backward(&x, &with_data(&y, &w)).expect("check fixture");
    let f = |v: &[T]| project(&w, &project_unit_modulus(&with_data(&x, v)).expect("check fixture").data);
    let err = gradient_check(f, &x.data, &dx.data, default_eps::<T>(), DIRS, 53);
    out.push(Check::new::<T>("projection", err));
}

fn check_amplitude_loss<T: Scalar>(out: &mut Vec<Check>) {
    let a = random_tensor::<T>([2, 2, 6, 6], 61);
    let b = random_tensor::<T>([2, 2, 6, 6], 62);
    let g = amplitude_mse_backward(&a, &b).expect("check fixture");
    let f = |v: &[T]| amplitude_mse(&with_data(&a, v), &b).expect("check fixture");
    let err = gradient_check(f, &a.data, &g.data, default_eps::<T>(), DIRS, 63);
    out.push(Check::new::<T>("amplitude loss", err));
}

fn check_spectral_ops<T: Scalar>(out: &mut Vec<Check>) {
    let ap = ApertureConfig {
        nx: 8,
        ny: 8,
        dx: 1e-3,
        dy: 1e-3,
        z_target: 0.3,
    };
    let term = build_phase_term(&ap, 2.0 * std::f64::consts::PI / 3.9e-3, 0.3).expect("check fixture");
    let ops = OperatorPair::<T>::new(&term);
    let x = random_tensor::<T>([2, 2, 8, 8], 71);
    let w = projection_weights::<T>(x.data.len(), 72);
    for (name, op) in [("image", &ops.image), ("generate", &ops.generate)] {
        let dx = op.backward_tensor(&with_data(&x, &w)).expect("check fixture");
        let f = |v: &[T]| project(&w, &op.apply_tensor(&with_data(&x, v)).expect("check fixture").data);
        let err = gradient_check(f, &x.data, &dx.data, default_eps::<T>(), DIRS, 73);
        out.push(Check::new::<T>(name, err));
    }
}

/// Checks every differentiable primitive at precision `T`.
pub fn primitive_checks<T: Scalar>() -> Vec<Check> {
    let mut out = Vec::new();
    check_conv::<T>(1, 3, &mut out);
    check_conv::<T>(2, 3, &mut out);
    check_conv::<T>(2, 7, &mut out);
    check_tconv::<T>(&mut out);
    check_instance_norm::<T>(&mut out);
    check_soft_threshold::<T>(&mut out);
    check_complex_products::<T>(&mut out);
    check_projection::<T>(&mut out);
    check_amplitude_loss::<T>(&mut out);
    check_spectral_ops::<T>(&mut out);
    out
}

pub fn small_arch() -> IfnetArch {
    IfnetArch {
        n_stages: 2,
        n_resblocks: 1,
        rows: 16,
        cols: 16,
        ..IfnetArch::default()
    }
}

/// Model with every decoder output layer randomized so that gradients reach
/// the focusing encoders.
pub fn gradcheck_model<T: Scalar>() -> UnfoldingModel<T> {
    let mut model = UnfoldingModel::<f64>::new(small_arch(), 7).expect("check fixture");
    for k in 0..model.arch.n_stages {
        for part in ["weight", "bias"] {
            let id = model.params.find(&format!("stage{k}.foc.dec2.{part}")).expect("check fixture");
            let noise: Vec<f64> = projection_weights(id.len, 100 + k as u64);
            for (v, n) in model.params.get_mut(id).iter_mut().zip(noise) {
                *v = 0.05 * n;
            }
        }
    }
    model.cast()
}

pub fn sample_pair<T: Scalar>(n: usize, seed: u64) -> (Vec<Complex<T>>, Vec<Complex<T>>) {
    let unit = |s| -> Vec<Complex<T>> {
        let v: Vec<f64> = projection_weights(2 * n, s);
        (0..n)
            .map(|i| {
                let squash = |x: f64| 1.0 / (1.0 + (-x).exp());
                num_complex::Complex::new(T::of(squash(v[i])), T::of(squash(v[n + i])))
            })
            .collect()
    };
    (unit(seed), unit(seed + 1))
}

/// Loss gradient of the small model over all parameters, or one named group.
pub fn model_check<T: Scalar>(only: Option<&str>) -> Check {
    let model = gradcheck_model::<T>();
    let (x, y) = sample_pair::<T>(model.arch.plane(), 200);
    let (_, grads) = model.loss_and_grad(&x, &y, 1.0).expect("check fixture");
    let range = match only {
        Some(name) => model.params.find(name).expect("check fixture").range(),
        None => 0..model.params.len(),
    };
    let base = model.params.values().to_vec();
    let f = |sub: &[T]| {
        let mut m = model.clone();
        m.params.values_mut()[range.clone()].copy_from_slice(sub);
        m.loss_and_grad(&x, &y, 1.0).expect("check fixture").0
    };
    let nonzero = grads[range.clone()].iter().any(|g| g.wide() != 0.0);
    let (b, g) = (base[range.clone()].to_vec(), grads[range.clone()].to_vec());
    let err = gradient_check(f, &b, &g, default_eps::<T>(), DIRS, 300);
    // an identically zero gradient cannot be verified
    let err = if nonzero { err } else { f64::INFINITY };
    Check::new::<T>(only.unwrap_or("full model"), err)
}

