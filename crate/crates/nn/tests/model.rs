use handsar_core::autofocus::{classical_iteration, ClassicConfig};
use handsar_core::imaging::build_phase_term;
use handsar_core::{Complex64, ComplexGrid};
use handsar_nn::complex::C;
use handsar_nn::gradcheck::projection_weights;
use handsar_nn::model::{grid_to_vec, vec_to_grid, IfnetArch, UnfoldingModel};
use handsar_nn::NnError;
use proptest::prelude::*;

fn arch(n_stages: usize, n_resblocks: usize, size: usize) -> IfnetArch {
    IfnetArch {
        n_stages,
        n_resblocks,
        rows: size,
        cols: size,
        ..IfnetArch::default()
    }
}

fn random_grid(n: usize, seed: u64, scale: f64) -> ComplexGrid {
    let v: Vec<f64> = projection_weights(2 * n * n, seed);
    ComplexGrid::new(n, n, (0..n * n).map(|i| Complex64::new(v[i], v[n * n + i]) * scale).collect()).unwrap()
}

fn unit_grid(n: usize, seed: u64) -> ComplexGrid {
    random_grid(n, seed, 1.0).map(|z| z / z.norm())
}

fn normalized_input(n: usize, seed: u64) -> Vec<C<f64>> {
    let v: Vec<f64> = projection_weights(2 * n * n, seed);
    let squash = |x: f64| 1.0 / (1.0 + (-x).exp());
    (0..n * n).map(|i| C::new(squash(v[i]), squash(v[n * n + i]))).collect()
}

fn rel_err(a: &ComplexGrid, b: &ComplexGrid) -> f64 {
    a.relative_error(b).unwrap()
}

#[test]
fn identity_stage_equals_classical_iteration() {
    let a = arch(1, 1, 32);
    let mut model = UnfoldingModel::<f64>::new(a.clone(), 3).unwrap();
    model.configure_identity();
    let term = build_phase_term(&a.aperture(), a.k_r(), a.depth).unwrap();
    let m_bar = term.conj();
    for (seed, mu, rho) in [(1, 0.5, 0.5), (2, 0.2, 0.9), (3, 1.0, 0.1)] {
        model.set_stage_steps(0, mu, rho);
        let sigma = random_grid(32, seed, 1.0);
        let phi = unit_grid(32, seed + 10);
        let s_eps = random_grid(32, seed + 20, 0.5);
        let cfg = ClassicConfig {
            mu,
            rho,
            lambda: 0.0,
            gamma: 0.0,
            ..ClassicConfig::default()
        };
        let (want_sigma, want_phi) = classical_iteration(&sigma, &phi, &s_eps, &term, &m_bar, &cfg).unwrap();

        let (sv, pv, sev) = (grid_to_vec(&sigma), grid_to_vec(&phi), grid_to_vec(&s_eps));
        let got_sigma = model.imaging_stage(0, &sv, &pv, &sev).unwrap();
        let got_phi = model.focusing_stage(0, &pv, &got_sigma, &sev).unwrap();
        let got_sigma = vec_to_grid(&got_sigma, 32, 32);
        let got_phi = vec_to_grid(&got_phi, 32, 32);
        assert!(rel_err(&got_sigma, &want_sigma) < 1e-6, "image step differs");
        assert!(rel_err(&got_phi, &want_phi) < 1e-6, "phase step differs");
    }
}

#[test]
fn identity_stage_keeps_exact_fit() {
    let a = arch(1, 1, 16);
    let mut model = UnfoldingModel::<f64>::new(a.clone(), 4).unwrap();
    model.configure_identity();
    let sigma = grid_to_vec::<f64>(&random_grid(16, 5, 1.0));
    let phi = vec![C::new(1.0, 0.0); 256];
    let s_eps = model.operators().generate.apply(&sigma);
    let out = model.imaging_stage(0, &sigma, &phi, &s_eps).unwrap();
    let err = out.iter().zip(&sigma).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-12);
    let phi_next = model.focusing_stage(0, &phi, &out, &s_eps).unwrap();
    assert!(phi_next.iter().all(|p| (p - C::new(1.0, 0.0)).norm() < 1e-9));
}

#[test]
fn focusing_output_is_unit_modulus() {
    let model = UnfoldingModel::<f64>::new(arch(2, 2, 16), 8).unwrap();
    let x = normalized_input(16, 9);
    let (_, phi) = model.forward_pass(&x).unwrap();
    assert!(phi.iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
    let zero = vec![C::new(0.0, 0.0); 256];
    let degenerate = model.focusing_stage(1, &zero, &zero, &zero).unwrap();
    assert!(degenerate.iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
}

#[test]
fn single_stage_is_composition() {
    let model = UnfoldingModel::<f64>::new(arch(1, 1, 16), 10).unwrap();
    let x = normalized_input(16, 11);
    let (sig, phi) = model.forward_pass(&x).unwrap();
    let w = model.to_working(&x);
    let s_eps = model.operators().generate.apply(&w);
    let ones = vec![C::new(1.0, 0.0); 256];
    let s1 = model.imaging_stage(0, &w, &ones, &s_eps).unwrap();
    let p1 = model.focusing_stage(0, &ones, &s1, &s_eps).unwrap();
    assert_eq!(model.from_working(&s1), sig);
    assert_eq!(p1, phi);
}

#[test]
fn random_init_is_stable_over_seeds() {
    let a = arch(5, 4, 32);
    for seed in 0..100u64 {
        let model = UnfoldingModel::<f32>::new(a.clone(), seed).unwrap();
        let x: Vec<C<f32>> = normalized_input(32, 1000 + seed)
            .iter()
            .map(|z| C::new(z.re as f32, z.im as f32))
            .collect();
        let (sig, phi) = model.forward_pass(&x).unwrap();
        assert!(sig.iter().chain(&phi).all(|z| z.re.is_finite() && z.im.is_finite()), "seed {seed}");
        let norm = |v: &[C<f32>]| v.iter().map(|z| z.norm_sqr() as f64).sum::<f64>().sqrt();
        let ratio = norm(&sig) / norm(&x);
        assert!((0.1..=10.0).contains(&ratio), "seed {seed}: norm ratio {ratio}");
    }
}

#[test]
fn recentering_round_trips() {
    let model = UnfoldingModel::<f64>::new(arch(1, 1, 16), 1).unwrap();
    let x = normalized_input(16, 2);
    let back = model.from_working(&model.to_working(&x));
    assert!(back.iter().zip(&x).all(|(a, b)| (a - b).norm() < 1e-15));
    let plain = UnfoldingModel::<f64>::new(IfnetArch { recenter: false, ..arch(1, 1, 16) }, 1).unwrap();
    assert_eq!(plain.to_working(&x), x);
}

#[test]
fn cast_preserves_values() {
    let model = UnfoldingModel::<f64>::new(arch(2, 1, 16), 12).unwrap();
    let back: UnfoldingModel<f64> = model.cast::<f32>().cast();
    for (a, b) in model.params.values().iter().zip(back.params.values()) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-3));
    }
    assert_eq!(model.params.specs(), back.params.specs());
}

#[test]
fn initial_scalars_and_zero_decoder() {
    let model = UnfoldingModel::<f64>::new(arch(3, 2, 16), 13).unwrap();
    for k in 0..3 {
        let (mu, rho, lambda) = model.stage_scalars(k);
        assert!((mu - 0.5).abs() < 1e-12 && (rho - 0.5).abs() < 1e-12 && (lambda - 0.01).abs() < 1e-12);
        for part in ["weight", "bias"] {
            let id = model.params.find(&format!("stage{k}.foc.dec2.{part}")).unwrap();
            assert!(model.params.get(id).iter().all(|v| *v == 0.0));
        }
    }
}

#[test]
fn rejects_bad_architectures_and_inputs() {
    assert!(UnfoldingModel::<f64>::new(arch(0, 1, 16), 0).is_err());
    assert!(UnfoldingModel::<f64>::new(arch(1, 0, 16), 0).is_err());
    assert!(UnfoldingModel::<f64>::new(arch(1, 1, 18), 0).is_err());
    let model = UnfoldingModel::<f64>::new(arch(1, 1, 16), 0).unwrap();
    let short = vec![C::new(0.0, 0.0); 100];
    assert!(matches!(model.forward_pass(&short), Err(NnError::Shape(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_stage_output_is_unit_modulus(seed in 0u64..1000) {
        let model = UnfoldingModel::<f64>::new(arch(2, 1, 16), seed).unwrap();
        let x = normalized_input(16, seed + 1);
        let (sig, phi) = model.forward_pass(&x).unwrap();
        prop_assert!(sig.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        prop_assert!(phi.iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn loss_is_blind_to_global_phase(theta in -3.0f64..3.0, seed in 0u64..1000) {
        let a: Vec<C<f64>> = normalized_input(8, seed);
        let rot = C::from_polar(1.0, theta);
        let b: Vec<C<f64>> = a.iter().map(|z| z * rot).collect();
        prop_assert!(handsar_nn::complex::amplitude_mse_slice(&a, &b) <= 1e-12);
    }
}
