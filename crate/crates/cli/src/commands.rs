use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use handsar_core::autofocus::run_coordinate_descent;
use handsar_core::forward::simulate_mono_plane;
use handsar_core::imaging::{bpa_reconstruct_mono, build_phase_term, op_image, plane_voxels, rma_reconstruct_padded};
use handsar_core::metrics::{evaluate, MetricReport};
use handsar_core::phase_error::{corrupt_signal, gen_trajectory, mix_mean, traj_to_phase_screen, NoiseSpec};
use handsar_core::ComplexGrid;
use handsar_io::binfmt::{atomic_write, read_grid, write_grid, write_trajectory};
use handsar_io::checkpoint::{read_checkpoint, write_checkpoint, TrainingMeta};
use handsar_io::dataset::{letter_scenes, SceneSpec};
use handsar_io::pgm::export_amplitude_image;
use handsar_io::scenes::{letter_scene, point_scene};
use handsar_io::{generate_dataset, load_pairs, load_raw, DatasetManifest, Split};
use handsar_nn::train::infer;
use handsar_nn::{score, train, EpochLog, IfnetArch, TrainConfig, TrainReport, UnfoldingModel};
use log::info;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::settings::*;

pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "model.ifn";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const OBJECTIVE_FILE: &str = "objective.csv";
pub const PAIRS_FILE: &str = "pairs.json";

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(atomic_write(path, text.as_bytes())?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_text(path, &serde_json::to_string_pretty(value).expect("report serializes"))
}

fn check_dims(grid: &ComplexGrid, geometry: &Geometry, what: &str) -> CliResult<()> {
    if grid.dims() != (geometry.rows, geometry.cols) {
        return Err(CliError::Config(format!(
            "{what} is {}x{}, geometry expects {}x{}",
            grid.rows(),
            grid.cols(),
            geometry.rows,
            geometry.cols
        )));
    }
    Ok(())
}

fn metric_json(m: &MetricReport) -> serde_json::Value {
    serde_json::json!({ "psnr_db": m.psnr_db, "ssim": m.ssim, "entropy": m.entropy })
}

pub fn simulate(cfg: &SimulateSettings) -> CliResult<()> {
    let aperture = cfg.geometry.aperture()?;
    let (rows, cols) = (cfg.geometry.rows, cfg.geometry.cols);
    let s = &cfg.scene;
    let scene = match s.kind {
        SceneKind::Letter => letter_scene(s.letter, rows, cols, &s.style, s.seed)?,
        SceneKind::Points => point_scene(rows, cols, s.count, s.margin, s.seed)?,
    };
    let k_r = cfg.geometry.k_r();
    let signal = simulate_mono_plane(&scene, &aperture, k_r)?;
    let image = op_image(&signal, &build_phase_term(&aperture, k_r, aperture.z_target)?)?;
    let out = &cfg.output_dir;
    write_grid(&out.join("scene.csg"), &scene)?;
    write_grid(&out.join("signal.csg"), &signal)?;
    write_grid(&out.join("image.csg"), &image)?;
    export_amplitude_image(&image, &out.join("image.pgm"))?;
    info!("wrote {rows}x{cols} scene, signal and image to {}", out.display());
    Ok(())
}

pub fn corrupt(cfg: &CorruptSettings) -> CliResult<()> {
    let aperture = cfg.geometry.aperture()?;
    let e = &cfg.error;
    if !(e.std_m >= 0.0 && e.std_m.is_finite()) {
        return Err(CliError::Config("key `error.std_m`: must be non-negative".into()));
    }
    if e.mix_group_size == 0 {
        return Err(CliError::Config("key `error.mix_group_size`: must be at least 1".into()));
    }
    let clean_signal = read_grid(&cfg.input)?;
    check_dims(&clean_signal, &cfg.geometry, "input signal")?;
    let k_r = cfg.geometry.k_r();
    let base = (0..e.mix_group_size)
        .map(|g| gen_trajectory(aperture.nx, e.std_m, e.smoothness, e.seed.wrapping_add(g as u64)))
        .collect::<handsar_core::Result<Vec<_>>>()?;
    let traj = mix_mean(&base)?;
    let screen = traj_to_phase_screen(&traj, k_r, aperture.ny)?;
    let noise = e.snr_db.map(|snr_db| NoiseSpec {
        snr_db,
        seed: e.seed ^ 0x5eed,
    });
    let signal = corrupt_signal(&clean_signal, &screen, noise)?;
    let m = build_phase_term(&aperture, k_r, aperture.z_target)?;
    let clean = op_image(&clean_signal, &m)?;
    let distorted = op_image(&signal, &m)?;
    let out = &cfg.output_dir;
    write_grid(&out.join("distorted_signal.csg"), &signal)?;
    write_grid(&out.join("distorted_image.csg"), &distorted)?;
    write_trajectory(&out.join("trajectory.trj"), &traj)?;
    export_amplitude_image(&distorted, &out.join("distorted_image.pgm"))?;
    let report = evaluate(&distorted, &clean)?;
    info!(
        "trajectory std {:.3e} m; distorted vs clean PSNR {:.2} dB, SSIM {:.4}",
        traj.std(),
        report.psnr_db,
        report.ssim
    );
    write_json(
        &out.join("corrupt_report.json"),
        &serde_json::json!({ "applied_std_m": traj.std(), "distorted_vs_clean": metric_json(&report) }),
    )
}

pub fn image(cfg: &ImageSettings) -> CliResult<()> {
    let aperture = cfg.geometry.aperture()?;
    let signal = read_grid(&cfg.input)?;
    check_dims(&signal, &cfg.geometry, "input signal")?;
    let k_r = cfg.geometry.k_r();
    let img = match cfg.method {
        ImagingMethod::Rma => rma_reconstruct_padded(&signal, &aperture, k_r, aperture.z_target, cfg.pad_factor)?,
        ImagingMethod::Bpa => {
            let voxels = plane_voxels(&aperture, aperture.z_target);
            let v = bpa_reconstruct_mono(&signal, &aperture, k_r, &voxels)?;
            ComplexGrid::new(aperture.nx, aperture.ny, v)?
        }
    };
    write_grid(&cfg.output_dir.join("image.csg"), &img)?;
    export_amplitude_image(&img, &cfg.output_dir.join("image.pgm"))?;
    info!("reconstructed {:?} image into {}", cfg.method, cfg.output_dir.display());
    Ok(())
}

pub fn autofocus(cfg: &AutofocusSettings) -> CliResult<()> {
    let aperture = cfg.geometry.aperture()?;
    let signal = read_grid(&cfg.input)?;
    check_dims(&signal, &cfg.geometry, "input signal")?;
    let k_r = cfg.geometry.k_r();
    let result = run_coordinate_descent(&signal, &aperture, k_r, aperture.z_target, &cfg.solver.classic())?;
    let out = &cfg.output_dir;
    write_grid(&out.join("focused_image.csg"), &result.image)?;
    write_grid(&out.join("compensator.csg"), &result.compensator.grid)?;
    export_amplitude_image(&result.image, &out.join("focused_image.pgm"))?;
    let mut csv = String::from("iteration,objective\n");
    for (i, f) in result.objective_trace.iter().enumerate() {
        csv.push_str(&format!("{i},{f:e}\n"));
    }
    write_text(&out.join(OBJECTIVE_FILE), &csv)?;
    let mut report = serde_json::json!({
        "iterations": result.iterations_run,
        "monotone": result.is_monotone(),
        "final_objective": result.objective_trace.last(),
    });
    if let Some(path) = &cfg.reference {
        let reference = read_grid(path)?;
        check_dims(&reference, &cfg.geometry, "reference image")?;
        let input = op_image(&signal, &build_phase_term(&aperture, k_r, aperture.z_target)?)?;
        let before = evaluate(&input, &reference)?;
        let after = evaluate(&result.image, &reference)?;
        info!("PSNR {:.2} -> {:.2} dB, SSIM {:.4} -> {:.4}", before.psnr_db, after.psnr_db, before.ssim, after.ssim);
        report["input_vs_reference"] = metric_json(&before);
        report["focused_vs_reference"] = metric_json(&after);
    }
    info!("{} iterations, objective {:?}", result.iterations_run, result.objective_trace.last());
    write_json(&out.join("autofocus_report.json"), &report)
}

pub fn dataset(cfg: &DatasetSettings) -> CliResult<()> {
    let d = &cfg.dataset;
    d.validate()?;
    let scenes = match cfg.scenes {
        SceneKind::Letter => letter_scenes(d)?,
        SceneKind::Points => (0..d.n_scenes)
            .map(|id| {
                Ok(SceneSpec {
                    scene_id: id,
                    letter: None,
                    plane: point_scene(d.rows, d.cols, cfg.point_count, d.rows / 8, d.seed.wrapping_add(1000 + id as u64))?,
                })
            })
            .collect::<handsar_io::Result<Vec<_>>>()?,
    };
    let start = Instant::now();
    let m = generate_dataset(&scenes, d, &cfg.output_dir)?;
    info!(
        "{} entries ({} train / {} val / {} test) in {:.1} s",
        m.entries.len(),
        m.entries_in(Split::Train).count(),
        m.entries_in(Split::Val).count(),
        m.entries_in(Split::Test).count(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn train_log_csv(history: &[EpochLog]) -> String {
    let mut csv = format!("{}\n", EpochLog::CSV_HEADER);
    for h in history {
        csv.push_str(&h.csv_row());
        csv.push('\n');
    }
    csv
}

/// Trains a fresh model on the train split, selecting by the val split.
fn fit(
    manifest: &DatasetManifest,
    dir: &Path,
    arch: IfnetArch,
    seed: u64,
    training: &TrainConfig,
) -> CliResult<(UnfoldingModel<f32>, TrainReport)> {
    training.validate()?;
    let train_set = load_pairs(manifest, dir, Split::Train)?;
    let val_set = load_pairs(manifest, dir, Split::Val)?;
    if train_set.is_empty() {
        return Err(CliError::Config(format!("{} has no training entries", dir.display())));
    }
    let mut model = UnfoldingModel::<f32>::new(arch, seed)?;
    info!(
        "training {} parameters on {} pairs ({} val)",
        model.n_params(),
        train_set.len(),
        val_set.len()
    );
    let report = train(&mut model, &train_set, &val_set, training, |log| {
        info!(
            "epoch {:>3} lr {:.2e} train {:.5e} val {:.5e} psnr {:.2}",
            log.epoch, log.lr, log.train_loss, log.val_loss, log.val_psnr
        )
    })?;
    Ok((model, report))
}

pub fn train_cmd(cfg: &TrainSettings) -> CliResult<()> {
    let manifest = DatasetManifest::read(&cfg.dataset_dir)?;
    let arch = cfg.model.arch(&manifest.config);
    arch.validate()?;
    let (model, report) = fit(&manifest, &cfg.dataset_dir, arch, cfg.model.seed, &cfg.training)?;
    let out = &cfg.output_dir;
    write_text(&out.join(TRAIN_LOG_FILE), &train_log_csv(&report.history))?;
    let meta = TrainingMeta {
        train_config: Some(cfg.training.clone()),
        best_epoch: Some(report.best_epoch),
        best_val_loss: Some(report.best_val_loss),
        history: report.history.clone(),
        dataset: Some(cfg.dataset_dir.display().to_string()),
    };
    write_checkpoint(&out.join(CHECKPOINT_FILE), &model, &meta)?;
    info!(
        "best epoch {}, train loss reduced by {:.1}%",
        report.best_epoch,
        100.0 * report.train_loss_reduction()
    );
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

pub fn infer_cmd(cfg: &InferSettings) -> CliResult<()> {
    let (model, _) = read_checkpoint(&cfg.checkpoint)?;
    let mut jobs: Vec<(PathBuf, Option<PathBuf>)> = cfg.inputs.iter().map(|p| (p.clone(), None)).collect();
    if let Some(dir) = &cfg.dataset_dir {
        let manifest = DatasetManifest::read(dir)?;
        jobs.extend(
            manifest
                .entries_in(cfg.split)
                .map(|e| (dir.join(&e.distorted_path), Some(dir.join(&e.clean_path)))),
        );
    }
    if jobs.is_empty() {
        return Err(CliError::Config("key `inputs`: no input images given".into()));
    }
    let mut pairs = Vec::new();
    for (input, reference) in &jobs {
        let distorted = read_grid(input)?;
        let result = infer(&model, &distorted)?;
        let name = stem(input);
        let focused = cfg.output_dir.join(format!("{name}_focused.csg"));
        write_grid(&focused, &result.estimate)?;
        write_grid(&cfg.output_dir.join(format!("{name}_compensator.csg")), &result.compensator)?;
        export_amplitude_image(&result.estimate, &cfg.output_dir.join(format!("{name}_focused.pgm")))?;
        if let Some(r) = reference {
            pairs.push(PairPaths {
                output: absolute(&focused),
                reference: absolute(r),
                input: Some(absolute(input)),
            });
        }
    }
    if !pairs.is_empty() {
        write_json(&cfg.output_dir.join(PAIRS_FILE), &pairs)?;
    }
    info!("focused {} images into {}", jobs.len(), cfg.output_dir.display());
    Ok(())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn eval_cmd(cfg: &EvalSettings) -> CliResult<()> {
    let mut pairs = cfg.pairs.clone();
    if let Some(index) = &cfg.index {
        let text = fs::read_to_string(index).map_err(|e| CliError::Io(format!("{}: {e}", index.display())))?;
        let listed: Vec<PairPaths> =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", index.display())))?;
        pairs.extend(listed);
    }
    if pairs.is_empty() {
        return Err(CliError::Config("key `pairs`: no image pairs given".into()));
    }
    let mut csv = String::from("name,psnr_db,ssim,entropy,input_psnr_db,input_ssim\n");
    let mut cols: [Vec<f64>; 3] = Default::default();
    let mut inputs: [Vec<f64>; 2] = Default::default();
    for p in &pairs {
        let reference = read_grid(&p.reference)?;
        let r = evaluate(&read_grid(&p.output)?, &reference)?;
        let (ip, is) = match &p.input {
            Some(path) => {
                let m = evaluate(&read_grid(path)?, &reference)?;
                inputs[0].push(m.psnr_db);
                inputs[1].push(m.ssim);
                (format!("{:.6}", m.psnr_db), format!("{:.6}", m.ssim))
            }
            None => (String::new(), String::new()),
        };
        cols[0].push(r.psnr_db);
        cols[1].push(r.ssim);
        cols[2].push(r.entropy);
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{ip},{is}\n",
            stem(&p.output),
            r.psnr_db,
            r.ssim,
            r.entropy
        ));
    }
    let stats: Vec<(f64, f64)> = cols.iter().map(|c| mean_std(c)).collect();
    let input_stats: Vec<Option<(f64, f64)>> = inputs
        .iter()
        .map(|c| (c.len() == pairs.len()).then(|| mean_std(c)))
        .collect();
    for (label, pick) in [("mean", 0usize), ("std", 1)] {
        let sel = |s: (f64, f64)| if pick == 0 { s.0 } else { s.1 };
        let inp: Vec<String> = input_stats
            .iter()
            .map(|s| s.map(|s| format!("{:.6}", sel(s))).unwrap_or_default())
            .collect();
        csv.push_str(&format!(
            "{label},{:.6},{:.6},{:.6},{},{}\n",
            sel(stats[0]),
            sel(stats[1]),
            sel(stats[2]),
            inp[0],
            inp[1]
        ));
    }
    write_text(&cfg.output_dir.join(METRICS_FILE), &csv)?;
    info!(
        "{} pairs: PSNR {:.2} ± {:.2} dB, SSIM {:.4} ± {:.4}",
        pairs.len(),
        stats[0].0,
        stats[0].1,
        stats[1].0,
        stats[1].1
    );
    Ok(())
}

pub const ABLATION_HEADER: &str =
    "n_stages,n_resblocks,input_psnr,output_psnr,input_ssim,output_ssim,train_loss_reduction,seconds";

pub fn ablate(cfg: &AblateSettings) -> CliResult<()> {
    if cfg.stages.is_empty() || cfg.resblocks.is_empty() {
        return Err(CliError::Config("keys `stages` and `resblocks` must be non-empty".into()));
    }
    let manifest = DatasetManifest::read(&cfg.dataset_dir)?;
    let eval_set = load_raw(&manifest, &cfg.dataset_dir, cfg.eval_split)?;
    if eval_set.is_empty() {
        return Err(CliError::Config(format!("key `eval_split`: split {} is empty", cfg.eval_split)));
    }
    let mut csv = format!("{ABLATION_HEADER}\n");
    for &k in &cfg.stages {
        for &r in &cfg.resblocks {
            let start = Instant::now();
            let settings = ModelSettings {
                n_stages: k,
                n_resblocks: r,
                ..cfg.model.clone()
            };
            let arch = settings.arch(&manifest.config);
            arch.validate()?;
            let (model, report) = fit(&manifest, &cfg.dataset_dir, arch, settings.seed, &cfg.training)?;
            let s = score(&model, &eval_set)?;
            let secs = start.elapsed().as_secs_f64();
            info!("K={k} R={r}: PSNR {:.2} -> {:.2} dB in {secs:.0} s", s.input_psnr, s.output_psnr);
            csv.push_str(&format!(
                "{k},{r},{:.6},{:.6},{:.6},{:.6},{:.6},{secs:.1}\n",
                s.input_psnr,
                s.output_psnr,
                s.input_ssim,
                s.output_ssim,
                report.train_loss_reduction()
            ));
            write_text(&cfg.output_dir.join(ABLATION_FILE), &csv)?;
        }
    }
    Ok(())
}
