//! Sparsity-driven autofocus by coordinate descent: ISTA image updates
//! alternating with projected gradient steps on a unit-modulus compensator.

use log::warn;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::ApertureConfig;
use crate::grid::ComplexGrid;
use crate::imaging::{build_phase_term, op_generate, op_image, PhaseTerm};
use crate::phase_error::PhaseScreen;

/// Slack allowed between consecutive objective values before a trace is
/// reported as non-monotone.
pub const MONOTONE_SLACK: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassicConfig {
    pub mu: f64,
    pub rho: f64,
    pub lambda: f64,
    /// Weight of the quadratic smoothness penalty on Φ along `x`.
    pub gamma: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for ClassicConfig {
    fn default() -> Self {
        Self {
            mu: 0.5,
            rho: 0.5,
            lambda: 0.01,
            gamma: 0.0,
            max_iters: 300,
            tol: 1e-6,
        }
    }
}

impl ClassicConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        if !(self.mu > 0.0 && ok(self.mu)) {
            return Err(Error::invalid("mu", format!("must be positive, got {}", self.mu)));
        }
        if !(self.rho > 0.0 && ok(self.rho)) {
            return Err(Error::invalid("rho", format!("must be positive, got {}", self.rho)));
        }
        if !(self.lambda >= 0.0 && ok(self.lambda)) {
            return Err(Error::invalid("lambda", format!("must be non-negative, got {}", self.lambda)));
        }
        if !(self.gamma >= 0.0 && ok(self.gamma)) {
            return Err(Error::invalid("gamma", format!("must be non-negative, got {}", self.gamma)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol", format!("must be non-negative, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FocusResult {
    pub image: ComplexGrid,
    pub compensator: PhaseScreen,
    /// Objective before the first iteration followed by the value after each
    /// iteration, in the unit-max-scaled units the solver works in.
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
}

impl FocusResult {
    pub fn is_monotone(&self) -> bool {
        self.objective_trace
            .windows(2)
            .all(|w| w[1] <= w[0] + MONOTONE_SLACK)
    }
}

/// `½‖Φ⊙S_ε − G(Σ, M̄)‖₂²`.
pub fn data_term(
    sigma: &ComplexGrid,
    phi: &ComplexGrid,
    s_eps: &ComplexGrid,
    m_bar: &PhaseTerm,
) -> Result<f64> {
    let g = op_generate(sigma, m_bar)?;
    Ok(0.5 * phi.hadamard(s_eps)?.sub(&g)?.norm_sqr())
}

/// `½‖Φ⊙S_ε − G(Σ, M̄)‖₂² + λ‖Σ‖₁`.
pub fn objective_eval(
    sigma: &ComplexGrid,
    phi: &ComplexGrid,
    s_eps: &ComplexGrid,
    m_bar: &PhaseTerm,
    lambda: f64,
) -> Result<f64> {
    Ok(data_term(sigma, phi, s_eps, m_bar)? + lambda * sigma.norm_l1())
}

/// `(γ/2)·Σ |Φ[i+1, j] − Φ[i, j]|²` over adjacent scan rows.
pub fn smoothness_penalty(phi: &ComplexGrid, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    let (rows, cols) = phi.dims();
    let mut acc = 0.0;
    for i in 0..rows.saturating_sub(1) {
        for j in 0..cols {
            acc += (phi.get(i + 1, j) - phi.get(i, j)).norm_sqr();
        }
    }
    0.5 * gamma * acc
}

fn smoothness_gradient(phi: &ComplexGrid, gamma: f64) -> ComplexGrid {
    let (rows, cols) = phi.dims();
    ComplexGrid::from_fn(rows, cols, |i, j| {
        let c = phi.get(i, j);
        let mut g = Complex64::new(0.0, 0.0);
        if i > 0 {
            g += c - phi.get(i - 1, j);
        }
        if i + 1 < rows {
            g += c - phi.get(i + 1, j);
        }
        g * gamma
    })
}

/// `R = Σ − μ·I(G(Σ, M̄) − Φ⊙S_ε, M)`.
pub fn grad_step_image(
    sigma: &ComplexGrid,
    phi: &ComplexGrid,
    s_eps: &ComplexGrid,
    m: &PhaseTerm,
    m_bar: &PhaseTerm,
    mu: f64,
) -> Result<ComplexGrid> {
    let residual = op_generate(sigma, m_bar)?.sub(&phi.hadamard(s_eps)?)?;
    let back = op_image(&residual, m)?;
    sigma.zip_map(&back, |s, b| s - b * mu)
}

/// Complex magnitude shrinkage by `lambda`; phase is kept.
pub fn soft_threshold(r: &ComplexGrid, lambda: f64) -> ComplexGrid {
    r.map(|v| shrink(v, lambda))
}

#[inline]
pub fn shrink(v: Complex64, lambda: f64) -> Complex64 {
    let a = v.norm();
    if a <= lambda || a == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        v * ((a - lambda) / a)
    }
}

/// `V = Φ − ρ·conj(S_ε) ⊙ (Φ⊙S_ε − G(Σ, M̄))`.
pub fn grad_step_phase(
    phi: &ComplexGrid,
    sigma: &ComplexGrid,
    s_eps: &ComplexGrid,
    m_bar: &PhaseTerm,
    rho: f64,
) -> Result<ComplexGrid> {
    let g = op_generate(sigma, m_bar)?;
    phase_step_with_generated(phi, &g, s_eps, rho)
}

pub(crate) fn phase_step_with_generated(
    phi: &ComplexGrid,
    generated: &ComplexGrid,
    s_eps: &ComplexGrid,
    rho: f64,
) -> Result<ComplexGrid> {
    phi.ensure_same_dims(s_eps)?;
    phi.ensure_same_dims(generated)?;
    let data: Vec<Complex64> = phi
        .as_slice()
        .iter()
        .zip(s_eps.as_slice())
        .zip(generated.as_slice())
        .map(|((&p, &s), &g)| p - s.conj() * (p * s - g) * rho)
        .collect();
    ComplexGrid::new(phi.rows(), phi.cols(), data)
}

/// Degenerate cutoff below which a cell projects to `1 + 0j`.
pub const PROJECTION_EPS: f64 = 1e-12;

/// `Φ = V/|V|` elementwise, with near-zero cells mapped to one.
pub fn prox_phase_unit_modulus(v: &ComplexGrid) -> PhaseScreen {
    PhaseScreen {
        grid: v.map(|z| {
            let a = z.norm();
            if a < PROJECTION_EPS {
                Complex64::new(1.0, 0.0)
            } else {
                z / a
            }
        }),
    }
}

/// One image update followed by one phase update.
pub fn classical_iteration(
    sigma: &ComplexGrid,
    phi: &ComplexGrid,
    s_eps: &ComplexGrid,
    m: &PhaseTerm,
    m_bar: &PhaseTerm,
    cfg: &ClassicConfig,
) -> Result<(ComplexGrid, ComplexGrid)> {
    let r = grad_step_image(sigma, phi, s_eps, m, m_bar, cfg.mu)?;
    let next_sigma = soft_threshold(&r, cfg.lambda);
    let mut v = grad_step_phase(phi, &next_sigma, s_eps, m_bar, cfg.rho)?;
    if cfg.gamma > 0.0 {
        let gs = smoothness_gradient(phi, cfg.gamma);
        v = v.zip_map(&gs, |a, b| a - b * cfg.rho)?;
    }
    let next_phi = prox_phase_unit_modulus(&v).grid;
    Ok((next_sigma, next_phi))
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    (prev - cur).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

/// Scales the input to unit max magnitude, alternates image and phase
/// updates from `Σ⁰ = I(S_ε)` and `Φ⁰ = 1`, and rescales the final image.
pub fn run_coordinate_descent(
    s_eps: &ComplexGrid,
    aperture: &ApertureConfig,
    k_r: f64,
    r: f64,
    cfg: &ClassicConfig,
) -> Result<FocusResult> {
    cfg.validate()?;
    if s_eps.dims() != aperture.dims() {
        return Err(Error::DimensionMismatch {
            expected: aperture.dims(),
            found: s_eps.dims(),
        });
    }
    if !s_eps.all_finite() {
        return Err(Error::NonFinite("distorted signal"));
    }
    let m = build_phase_term(aperture, k_r, r)?;
    let m_bar = m.conj();

    let peak = s_eps.max_abs();
    let scale = if peak > 0.0 { peak } else { 1.0 };
    let s = s_eps.scale(1.0 / scale);

    let mut sigma = op_image(&s, &m)?;
    let mut phi = ComplexGrid::ones(s.rows(), s.cols());
    let objective =
        |sg: &ComplexGrid, ph: &ComplexGrid| -> Result<f64> {
            Ok(objective_eval(sg, ph, &s, &m_bar, cfg.lambda)? + smoothness_penalty(ph, cfg.gamma))
        };
    let mut trace = vec![objective(&sigma, &phi)?];
    let mut iterations_run = 0;
    for _ in 0..cfg.max_iters {
        let (ns, np) = classical_iteration(&sigma, &phi, &s, &m, &m_bar, cfg)?;
        sigma = ns;
        phi = np;
        iterations_run += 1;
        let f = objective(&sigma, &phi)?;
        if !f.is_finite() {
            return Err(Error::NonFinite("autofocus objective"));
        }
        let prev = *trace.last().unwrap();
        trace.push(f);
        if f > prev + MONOTONE_SLACK {
            warn!("objective increased at iteration {iterations_run}: {prev} -> {f}");
        }
        if relative_change(prev, f) < cfg.tol {
            break;
        }
    }
    Ok(FocusResult {
        image: sigma.scale(scale),
        compensator: PhaseScreen { grid: phi },
        objective_trace: trace,
        iterations_run,
    })
}

/// ISTA image updates with the compensator held fixed, starting from
/// `Σ⁰ = I(Φ⊙S_ε)`. Uses the same input scaling as [`run_coordinate_descent`].
pub fn run_fixed_compensator(
    s_eps: &ComplexGrid,
    compensator: &PhaseScreen,
    aperture: &ApertureConfig,
    k_r: f64,
    r: f64,
    cfg: &ClassicConfig,
) -> Result<ComplexGrid> {
    cfg.validate()?;
    let m = build_phase_term(aperture, k_r, r)?;
    let m_bar = m.conj();
    let peak = s_eps.max_abs();
    let scale = if peak > 0.0 { peak } else { 1.0 };
    let s = s_eps.scale(1.0 / scale);
    let phi = &compensator.grid;
    let mut sigma = op_image(&phi.hadamard(&s)?, &m)?;
    let mut prev = objective_eval(&sigma, phi, &s, &m_bar, cfg.lambda)?;
    for _ in 0..cfg.max_iters {
        let r = grad_step_image(&sigma, phi, &s, &m, &m_bar, cfg.mu)?;
        sigma = soft_threshold(&r, cfg.lambda);
        let f = objective_eval(&sigma, phi, &s, &m_bar, cfg.lambda)?;
        if relative_change(prev, f) < cfg.tol {
            break;
        }
        prev = f;
    }
    Ok(sigma.scale(scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::wavenumber;
    use crate::phase_error::{corrupt_signal, gen_trajectory, oracle_compensator, traj_to_phase_screen};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn ap(n: usize) -> ApertureConfig {
        ApertureConfig {
            nx: n,
            ny: n,
            dx: 1e-3,
            dy: 1e-3,
            z_target: 0.3,
        }
    }

    fn random_grid(n: usize, seed: u64, amp: f64) -> ComplexGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexGrid::from_fn(n, n, |_, _| c(rng.random_range(-amp..amp), rng.random_range(-amp..amp)))
    }

    fn band_limit(g: &ComplexGrid, m: &PhaseTerm) -> ComplexGrid {
        op_image(&op_generate(g, &m.conj()).unwrap(), m).unwrap()
    }

    #[test]
    fn soft_threshold_examples() {
        let g = ComplexGrid::new(1, 3, vec![c(0.5, 0.0), c(0.1, 0.0), c(3.0, 4.0)]).unwrap();
        let a = soft_threshold(&g, 0.2);
        assert!((a.get(0, 0) - c(0.3, 0.0)).norm() < 1e-15);
        assert_eq!(a.get(0, 1), c(0.0, 0.0));
        let b = soft_threshold(&g, 1.0);
        assert!((b.get(0, 2) - c(2.4, 3.2)).norm() < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let g = ComplexGrid::new(1, 3, vec![c(2.0, 0.0), c(0.0, 0.0), c(-3.0, 4.0)]).unwrap();
        let p = prox_phase_unit_modulus(&g);
        assert_eq!(p.grid.get(0, 0), c(1.0, 0.0));
        assert_eq!(p.grid.get(0, 1), c(1.0, 0.0));
        assert!((p.grid.get(0, 2) - c(-0.6, 0.8)).norm() < 1e-15);
    }

    #[test]
    fn objective_trivial_and_scalar_loop() {
        let a = ap(8);
        let m = build_phase_term(&a, wavenumber(77e9), 0.3).unwrap();
        let m_bar = m.conj();
        let z = ComplexGrid::zeros(8, 8);
        assert_eq!(objective_eval(&z, &ComplexGrid::ones(8, 8), &z, &m_bar, 0.5).unwrap(), 0.0);

        let sigma = random_grid(8, 1, 1.0);
        let phi = random_grid(8, 2, 1.0);
        let s = random_grid(8, 3, 1.0);
        let lambda = 0.07;
        // naive 2D DFT of Σ, mask, naive inverse
        let n = 8usize;
        let w = |a: usize, b: usize, sign: f64| Complex64::from_polar(1.0, sign * 2.0 * std::f64::consts::PI * (a * b) as f64 / n as f64);
        let mut spec = vec![c(0.0, 0.0); n * n];
        for p in 0..n {
            for q in 0..n {
                for x in 0..n {
                    for y in 0..n {
                        spec[p * n + q] += sigma.get(x, y) * w(p, x, -1.0) * w(q, y, -1.0);
                    }
                }
                spec[p * n + q] *= m_bar.grid.get(p, q);
            }
        }
        let mut want = 0.0;
        for x in 0..n {
            for y in 0..n {
                let mut g = c(0.0, 0.0);
                for p in 0..n {
                    for q in 0..n {
                        g += spec[p * n + q] * w(p, x, 1.0) * w(q, y, 1.0);
                    }
                }
                g /= (n * n) as f64;
                want += 0.5 * (phi.get(x, y) * s.get(x, y) - g).norm_sqr() + lambda * sigma.get(x, y).norm();
            }
        }
        let got = objective_eval(&sigma, &phi, &s, &m_bar, lambda).unwrap();
        assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn consistent_triple_has_zero_data_term() {
        let a = ap(16);
        let k = wavenumber(77e9);
        let m = build_phase_term(&a, k, 0.3).unwrap();
        let sigma = band_limit(&random_grid(16, 4, 1.0), &m);
        let s_clean = op_generate(&sigma, &m.conj()).unwrap();
        let screen = traj_to_phase_screen(&gen_trajectory(16, 3e-4, 2.0, 5).unwrap(), k, 16).unwrap();
        let s_eps = corrupt_signal(&s_clean, &screen, None).unwrap();
        let phi = oracle_compensator(&screen).grid;
        assert!(data_term(&sigma, &phi, &s_eps, &m.conj()).unwrap() <= 1e-18);
        let f = objective_eval(&sigma, &phi, &s_eps, &m.conj(), 0.01).unwrap();
        assert!((f - 0.01 * sigma.norm_l1()).abs() < 1e-12);
    }

    #[test]
    fn steps_are_identity_at_exact_fit_or_zero_step() {
        let a = ap(8);
        let m = build_phase_term(&a, wavenumber(77e9), 0.3).unwrap();
        let sigma = band_limit(&random_grid(8, 6, 1.0), &m);
        let s = op_generate(&sigma, &m.conj()).unwrap();
        let phi = ComplexGrid::ones(8, 8);
        let r = grad_step_image(&sigma, &phi, &s, &m, &m.conj(), 0.5).unwrap();
        assert!(r.relative_error(&sigma).unwrap() < 1e-12);
        let v = grad_step_phase(&phi, &sigma, &s, &m.conj(), 0.5).unwrap();
        assert!(v.relative_error(&phi).unwrap() < 1e-12);

        let other = random_grid(8, 7, 1.0);
        assert_eq!(grad_step_image(&other, &phi, &s, &m, &m.conj(), 0.0).unwrap(), other);
        let p2 = random_grid(8, 8, 1.0);
        assert_eq!(grad_step_phase(&p2, &other, &s, &m.conj(), 0.0).unwrap(), p2);
    }

    #[test]
    fn half_steps_decrease_the_data_term() {
        let a = ap(16);
        let m = build_phase_term(&a, wavenumber(77e9), 0.3).unwrap();
        let m_bar = m.conj();
        for seed in 0..5 {
            let s = random_grid(16, 100 + seed, 0.7);
            let sigma = band_limit(&random_grid(16, 200 + seed, 0.5), &m);
            let phi = prox_phase_unit_modulus(&random_grid(16, 300 + seed, 1.0)).grid;
            let before = data_term(&sigma, &phi, &s, &m_bar).unwrap();
            let r = grad_step_image(&sigma, &phi, &s, &m, &m_bar, 0.5).unwrap();
            let mid = data_term(&r, &phi, &s, &m_bar).unwrap();
            assert!(mid < before);
            let v = grad_step_phase(&phi, &r, &s, &m_bar, 0.5).unwrap();
            let p = prox_phase_unit_modulus(&v).grid;
            assert!(data_term(&r, &p, &s, &m_bar).unwrap() <= mid + 1e-12);
        }
    }

    #[test]
    fn consistent_point_is_stationary_without_sparsity() {
        let a = ap(16);
        let k = wavenumber(77e9);
        let m = build_phase_term(&a, k, 0.3).unwrap();
        let sigma = band_limit(&random_grid(16, 9, 0.3), &m);
        let s_clean = op_generate(&sigma, &m.conj()).unwrap();
        let screen = traj_to_phase_screen(&gen_trajectory(16, 3e-4, 2.0, 1).unwrap(), k, 16).unwrap();
        let s_eps = corrupt_signal(&s_clean, &screen, None).unwrap();
        let phi = oracle_compensator(&screen).grid;
        let cfg = ClassicConfig {
            lambda: 0.0,
            ..ClassicConfig::default()
        };
        let (ns, np) = classical_iteration(&sigma, &phi, &s_eps, &m, &m.conj(), &cfg).unwrap();
        assert!(ns.sub(&sigma).unwrap().norm_l2() < 1e-10);
        assert!(np.sub(&phi).unwrap().norm_l2() < 1e-10);
    }

    #[test]
    fn single_iteration_contract() {
        let a = ap(8);
        let k = wavenumber(77e9);
        let s = random_grid(8, 11, 1.0);
        let cfg = ClassicConfig {
            max_iters: 1,
            ..ClassicConfig::default()
        };
        let res = run_coordinate_descent(&s, &a, k, 0.3, &cfg).unwrap();
        assert_eq!(res.iterations_run, 1);
        assert_eq!(res.objective_trace.len(), 2);

        let m = build_phase_term(&a, k, 0.3).unwrap();
        let peak = s.max_abs();
        let sn = s.scale(1.0 / peak);
        let (ns, np) = classical_iteration(&op_image(&sn, &m).unwrap(), &ComplexGrid::ones(8, 8), &sn, &m, &m.conj(), &cfg).unwrap();
        assert!(res.image.relative_error(&ns.scale(peak)).unwrap() < 1e-14);
        assert_eq!(res.compensator.grid, np);
        assert!(ClassicConfig { max_iters: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn fixed_oracle_matches_clean_ista() {
        let a = ap(16);
        let k = wavenumber(77e9);
        let m = build_phase_term(&a, k, 0.3).unwrap();
        let sigma = band_limit(&random_grid(16, 12, 1.0), &m);
        let s_clean = op_generate(&sigma, &m.conj()).unwrap();
        let screen = traj_to_phase_screen(&gen_trajectory(16, 5e-4, 2.0, 2).unwrap(), k, 16).unwrap();
        let s_eps = corrupt_signal(&s_clean, &screen, None).unwrap();
        let cfg = ClassicConfig {
            max_iters: 40,
            tol: 0.0,
            ..ClassicConfig::default()
        };
        let with_oracle = run_fixed_compensator(&s_eps, &oracle_compensator(&screen), &a, k, 0.3, &cfg).unwrap();
        let clean = run_fixed_compensator(&s_clean, &PhaseScreen::identity(16, 16), &a, k, 0.3, &cfg).unwrap();
        assert!(with_oracle.relative_error(&clean).unwrap() < 1e-9);
    }

    #[test]
    fn smoothness_penalty_and_gradient_agree() {
        let phi = random_grid(6, 13, 1.0);
        let dir = random_grid(6, 14, 1.0);
        let gamma = 0.3;
        let g = smoothness_gradient(&phi, gamma);
        let h = 1e-6;
        let plus = phi.zip_map(&dir, |a, b| a + b * h).unwrap();
        let minus = phi.zip_map(&dir, |a, b| a - b * h).unwrap();
        let fd = (smoothness_penalty(&plus, gamma) - smoothness_penalty(&minus, gamma)) / (2.0 * h);
        // real inner product of the Wirtinger-style gradient with the direction
        let an: f64 = g.as_slice().iter().zip(dir.as_slice()).map(|(a, b)| (a.conj() * b).re).sum();
        assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0));
    }

    #[test]
    fn monotone_on_normalized_random_inputs() {
        let a = ap(16);
        let k = wavenumber(77e9);
        for seed in 0..3 {
            let s = random_grid(16, 500 + seed, 1.0);
            let cfg = ClassicConfig {
                max_iters: 40,
                ..ClassicConfig::default()
            };
            let res = run_coordinate_descent(&s, &a, k, 0.3, &cfg).unwrap();
            assert!(res.is_monotone(), "{:?}", res.objective_trace);
            assert!(res.compensator.max_modulus_error() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn soft_threshold_is_nonexpansive(
            a in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 16),
            b in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 16),
            lambda in 0.0f64..1.5,
        ) {
            let ga = ComplexGrid::new(4, 4, a.iter().map(|&(x, y)| c(x, y)).collect()).unwrap();
            let gb = ComplexGrid::new(4, 4, b.iter().map(|&(x, y)| c(x, y)).collect()).unwrap();
            let lhs = soft_threshold(&ga, lambda).sub(&soft_threshold(&gb, lambda)).unwrap().norm_l2();
            prop_assert!(lhs <= ga.sub(&gb).unwrap().norm_l2() + 1e-12);
        }

        #[test]
        fn projection_is_unit_modulus(v in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 9)) {
            let g = ComplexGrid::new(3, 3, v.iter().map(|&(x, y)| c(x, y)).collect()).unwrap();
            prop_assert!(prox_phase_unit_modulus(&g).max_modulus_error() < 1e-12);
        }
    }
}
