use handsar_core::imaging::{build_phase_term, op_generate, op_image};
use handsar_core::normalize::normalize_minmax;
use handsar_core::phase_error::{corrupt_signal, gen_trajectory, traj_to_phase_screen};
use handsar_core::{Complex64, ComplexGrid};
use handsar_nn::model::{IfnetArch, UnfoldingModel};
use handsar_nn::train::{evaluate_set, infer, infer_batch, train, Adam, Optimizer, TrainConfig, TrainPair};
use handsar_nn::NnError;

fn arch(n_stages: usize, n_resblocks: usize, size: usize) -> IfnetArch {
    IfnetArch {
        n_stages,
        n_resblocks,
        rows: size,
        cols: size,
        ..IfnetArch::default()
    }
}

/// Raw `(distorted, clean)` images of a block-shaped scene.
fn raw_pair(a: &IfnetArch, seed: u64, error_std: f64) -> (ComplexGrid, ComplexGrid) {
    let n = a.rows;
    let s = seed as usize;
    let scene = ComplexGrid::from_fn(n, a.cols, |i, j| {
        let bar = (n / 4 + s % 5..n / 4 + s % 5 + n / 2).contains(&i) && (n / 3..n / 3 + 3).contains(&j);
        let top = (n / 4..n / 4 + 3).contains(&i) && (n / 4 + s % 3..3 * n / 4).contains(&j);
        if bar || top {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let term = build_phase_term(&a.aperture(), a.k_r(), a.depth).unwrap();
    let signal = op_generate(&scene, &term.conj()).unwrap();
    let clean = op_image(&signal, &term).unwrap();
    let traj = gen_trajectory(n, error_std, 5.0, seed).unwrap();
    let screen = traj_to_phase_screen(&traj, a.k_r(), a.cols).unwrap();
    let distorted = op_image(&corrupt_signal(&signal, &screen, None).unwrap(), &term).unwrap();
    (distorted, clean)
}

fn pair(a: &IfnetArch, seed: u64, error_std: f64) -> TrainPair {
    let (d, c) = raw_pair(a, seed, error_std);
    TrainPair {
        input: normalize_minmax(&d).0,
        target: normalize_minmax(&c).0,
    }
}

fn quick_cfg(epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        decay_start_epoch: epochs,
        batch_size,
        ..TrainConfig::default()
    }
}

#[test]
fn schedule_is_flat_then_linear_to_zero() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(0), 1e-4);
    assert_eq!(cfg.lr_at(49), 1e-4);
    assert!((cfg.lr_at(50) - 1e-4).abs() < 1e-18);
    assert!((cfg.lr_at(65) - 0.5e-4).abs() < 1e-18);
    assert!((cfg.lr_at(79) - 1e-4 / 30.0).abs() < 1e-18);
    assert_eq!(cfg.lr_at(80), 0.0);
    let bad = TrainConfig {
        decay_start_epoch: 90,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
}

#[test]
fn adam_matches_closed_form_first_steps() {
    let mut adam = Adam::new(2, 0.9, 0.999, 1e-8);
    let mut x = vec![1.0f64, -2.0];
    adam.step(&mut x, &[0.5, -4.0], 0.1);
    // bias-corrected moments give a step of lr·sign(g) on the first update
    assert!((x[0] - 0.9).abs() < 1e-7 && (x[1] + 1.9).abs() < 1e-7);
    let x1 = x[0];
    adam.step(&mut x, &[0.5, 0.0], 0.1);
    let m = 0.9 * 0.05 + 0.1 * 0.5;
    let v = 0.999 * 0.00025 + 0.001 * 0.25;
    let want = x1 - 0.1 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
    assert!((x[0] - want).abs() < 1e-12);
}

#[test]
fn one_sample_overfit() {
    let a = arch(3, 2, 64);
    let mut model = UnfoldingModel::<f32>::new(a.clone(), 1).unwrap();
    let data = vec![pair(&a, 3, 0.7e-3)];
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        ..quick_cfg(500, 1)
    };
    let report = train(&mut model, &data, &[], &cfg, |_| {}).unwrap();
    let first = report.history[0].train_loss;
    let best = report.history.iter().map(|l| l.train_loss).fold(f64::INFINITY, f64::min);
    assert!(best < 0.1 * first, "loss {first} -> {best}");
}

#[test]
fn two_epoch_run_is_bitwise_reproducible() {
    let a = arch(2, 1, 16);
    let data: Vec<TrainPair> = (0..5).map(|s| pair(&a, s, 0.7e-3)).collect();
    let val = vec![pair(&a, 9, 0.7e-3)];
    let cfg = quick_cfg(2, 2);
    let run = || {
        let mut m = UnfoldingModel::<f32>::new(a.clone(), 4).unwrap();
        let rep = train(&mut m, &data, &val, &cfg, |_| {}).unwrap();
        (m.params.values().to_vec(), rep.history)
    };
    let (p1, h1) = run();
    let (p2, h2) = run();
    assert_eq!(p1, p2);
    assert_eq!(h1, h2);
    let fresh = UnfoldingModel::<f32>::new(a.clone(), 4).unwrap();
    assert_ne!(fresh.params.values(), &p1[..]);
}

#[test]
fn sgd_option_and_callbacks() {
    let a = arch(1, 1, 16);
    let data = vec![pair(&a, 1, 0.7e-3), pair(&a, 2, 0.7e-3)];
    let mut model = UnfoldingModel::<f64>::new(a, 2).unwrap();
    let cfg = TrainConfig {
        optimizer: Optimizer::Sgd,
        learning_rate: 1e-2,
        ..quick_cfg(3, 2)
    };
    let mut seen = Vec::new();
    let rep = train(&mut model, &data, &data, &cfg, |log| seen.push(log.epoch)).unwrap();
    assert_eq!(seen, vec![0, 1, 2]);
    assert!(rep.history.iter().all(|l| l.val_loss.is_finite() && l.val_psnr.is_finite()));
    let best = rep.history.iter().map(|l| l.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(rep.best_val_loss, best);
    let (val_loss, _, _) = evaluate_set(&model, &data).unwrap();
    assert_eq!(val_loss, best);
}

#[test]
fn rejects_empty_and_mismatched_data() {
    let a = arch(1, 1, 16);
    let mut model = UnfoldingModel::<f64>::new(a.clone(), 0).unwrap();
    assert!(matches!(
        train(&mut model, &[], &[], &quick_cfg(1, 1), |_| {}),
        Err(NnError::Empty(_))
    ));
    let wrong = pair(&arch(1, 1, 32), 0, 1e-3);
    assert!(matches!(
        train(&mut model, std::slice::from_ref(&wrong), &[], &quick_cfg(1, 1), |_| {}),
        Err(NnError::Shape(_))
    ));
    assert!(infer(&model, &wrong.input).is_err());
}

#[test]
fn non_finite_loss_aborts() {
    let a = arch(1, 1, 16);
    let mut model = UnfoldingModel::<f64>::new(a.clone(), 0).unwrap();
    let mut bad = pair(&a, 0, 1e-3);
    bad.target.as_mut_slice()[0] = Complex64::new(f64::NAN, 0.0);
    let err = train(&mut model, &[bad], &[], &quick_cfg(1, 1), |_| {}).unwrap_err();
    assert!(matches!(err, NnError::NonFinite { epoch: 0, .. }));
}

#[test]
fn inference_denormalizes_and_is_per_sample() {
    let a = arch(2, 1, 16);
    let model = UnfoldingModel::<f64>::new(a.clone(), 5).unwrap();
    let raws: Vec<ComplexGrid> = (0..3).map(|s| raw_pair(&a, s, 0.5e-3).0.scale(1e3)).collect();
    let batch = infer_batch(&model, &raws).unwrap();
    for (raw, got) in raws.iter().zip(&batch) {
        let single = infer(&model, raw).unwrap();
        assert_eq!(&single, got);
        assert_eq!(single.image.dims(), raw.dims());
        let (norm, rec) = normalize_minmax(raw);
        assert_eq!(single.record, rec);
        let (direct, _) = model.forward_grid(&norm).unwrap();
        assert_eq!(single.normalized, direct);
        let back = handsar_core::normalize::denormalize(&direct, &rec);
        assert_eq!(single.image, back);
    }
}
