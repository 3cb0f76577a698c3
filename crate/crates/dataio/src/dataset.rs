//! Paired distorted/clean corpus synthesis, manifests and scene-disjoint
//! splits.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use handsar_core::geometry::{wavenumber, ApertureConfig};
use handsar_core::imaging::{build_phase_term, op_image};
use handsar_core::normalize::{self, NormalizationRecord};
use handsar_core::phase_error::{corrupt_signal, gen_trajectory, mix_mean, traj_to_phase_screen, NoiseSpec, Trajectory};
use handsar_core::forward::simulate_mono_plane;
use handsar_core::ComplexGrid;
use handsar_nn::train::TrainPair;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binfmt::{atomic_write, read_grid, write_grid, write_trajectory};
use crate::error::{IoError, Result};
use crate::scenes::{letter_scene, pick_letters, LetterStyle};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub rows: usize,
    pub cols: usize,
    pub dx: f64,
    pub dy: f64,
    pub depth: f64,
    pub frequency_hz: f64,
    pub n_scenes: usize,
    pub trajectories_per_scene: usize,
    /// Standard deviation of each base trajectory before mixing (m).
    pub error_levels: Vec<f64>,
    pub mix_group_size: usize,
    /// Correlation length of the base trajectories in scan samples.
    pub smoothness: f64,
    pub snr_db: Option<f64>,
    pub n_train_scenes: usize,
    pub n_val_scenes: usize,
    pub letter_style: LetterStyle,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            dx: 1e-3,
            dy: 1e-3,
            depth: 0.3,
            frequency_hz: 77e9,
            n_scenes: 10,
            trajectories_per_scene: 20,
            error_levels: vec![0.7e-3],
            mix_group_size: 5,
            smoothness: 5.0,
            snr_db: None,
            n_train_scenes: 7,
            n_val_scenes: 1,
            letter_style: LetterStyle::default(),
            seed: 7,
        }
    }
}

impl DatasetConfig {
    pub fn aperture(&self) -> ApertureConfig {
        ApertureConfig {
            nx: self.rows,
            ny: self.cols,
            dx: self.dx,
            dy: self.dy,
            z_target: self.depth,
        }
    }

    pub fn k_r(&self) -> f64 {
        wavenumber(self.frequency_hz)
    }

    pub fn validate(&self) -> Result<()> {
        self.aperture().validate()?;
        let bad = |m: &str| Err(IoError::Invalid(m.to_string()));
        if self.n_scenes == 0 {
            return bad("n_scenes must be at least 1");
        }
        if self.trajectories_per_scene == 0 || self.mix_group_size == 0 {
            return bad("trajectories_per_scene and mix_group_size must be at least 1");
        }
        if self.error_levels.is_empty() || self.error_levels.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("error_levels must be a non-empty list of non-negative values");
        }
        if self.n_train_scenes + self.n_val_scenes > self.n_scenes {
            return bad("train and val scene counts exceed n_scenes");
        }
        if !(self.frequency_hz > 0.0) {
            return bad("frequency_hz must be positive");
        }
        Ok(())
    }

    pub fn split_of(&self, scene_id: usize) -> Split {
        if scene_id < self.n_train_scenes {
            Split::Train
        } else if scene_id < self.n_train_scenes + self.n_val_scenes {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// Serializable mirror of [`NormalizationRecord`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl From<NormalizationRecord> for NormRecord {
    fn from(r: NormalizationRecord) -> Self {
        Self {
            re_min: r.re_min,
            re_max: r.re_max,
            im_min: r.im_min,
            im_max: r.im_max,
        }
    }
}

impl From<NormRecord> for NormalizationRecord {
    fn from(r: NormRecord) -> Self {
        Self {
            re_min: r.re_min,
            re_max: r.re_max,
            im_min: r.im_min,
            im_max: r.im_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: usize,
    pub letter: Option<char>,
    pub split: Split,
    pub trajectory_seed: u64,
    pub error_std_m: f64,
    /// Standard deviation of the mixed trajectory actually applied (m).
    pub applied_std_m: f64,
    pub clean_path: String,
    pub distorted_path: String,
    pub trajectory_path: String,
    pub clean_norm: NormRecord,
    pub distorted_norm: NormRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: DatasetConfig,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Fails if a scene carries more than one split tag.
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<usize, Split> = BTreeMap::new();
        for e in &self.entries {
            match seen.get(&e.scene_id) {
                Some(&s) if s != e.split => {
                    let (a, b) = if s < e.split { (s, e.split) } else { (e.split, s) };
                    return Err(IoError::SplitOverlap {
                        scene_id: e.scene_id,
                        first: a.to_string(),
                        second: b.to_string(),
                    });
                }
                _ => {
                    seen.insert(e.scene_id, e.split);
                }
            }
        }
        Ok(())
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        atomic_write(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(self)?)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| IoError::io(&path, e))?;
        let m: DatasetManifest = serde_json::from_slice(&bytes)?;
        if m.version != MANIFEST_VERSION {
            return Err(IoError::Version {
                what: "manifest",
                found: m.version,
                expected: MANIFEST_VERSION,
            });
        }
        m.validate()?;
        Ok(m)
    }
}

/// One scene on the imaging plane.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub scene_id: usize,
    pub letter: Option<char>,
    pub plane: ComplexGrid,
}

/// Letter scenes for every scene id in the config.
pub fn letter_scenes(cfg: &DatasetConfig) -> Result<Vec<SceneSpec>> {
    let letters = pick_letters(cfg.n_scenes, cfg.seed)?;
    letters
        .into_iter()
        .enumerate()
        .map(|(id, c)| {
            Ok(SceneSpec {
                scene_id: id,
                letter: Some(c),
                plane: letter_scene(c, cfg.rows, cfg.cols, &cfg.letter_style, cfg.seed.wrapping_add(1000 + id as u64))?,
            })
        })
        .collect()
}

/// One generated pair with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub scene_id: usize,
    pub letter: Option<char>,
    pub split: Split,
    pub trajectory_seed: u64,
    pub error_std_m: f64,
    pub trajectory: Trajectory,
    /// Corrupted signal before reconstruction.
    pub signal: ComplexGrid,
    pub distorted: ComplexGrid,
    pub clean: ComplexGrid,
}

impl Sample {
    pub fn normalized_pair(&self) -> TrainPair {
        TrainPair {
            input: normalize::normalize_minmax(&self.distorted).0,
            target: normalize::normalize_minmax(&self.clean).0,
        }
    }
}

fn entry_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.next_u64()
}

/// Generates every `(scene, level, trajectory)` sample in memory. The result
/// depends only on `scenes` and `cfg`.
pub fn synthesize(scenes: &[SceneSpec], cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(IoError::Invalid("at least one scene is required".into()));
    }
    let aperture = cfg.aperture();
    let k_r = cfg.k_r();
    let term = build_phase_term(&aperture, k_r, cfg.depth)?;
    let per_scene = cfg.error_levels.len() * cfg.trajectories_per_scene;
    let jobs: Vec<(usize, usize, usize)> = (0..scenes.len())
        .flat_map(|s| {
            (0..cfg.error_levels.len()).flat_map(move |l| (0..cfg.trajectories_per_scene).map(move |t| (s, l, t)))
        })
        .collect();
    let cleans: Vec<(ComplexGrid, ComplexGrid)> = scenes
        .par_iter()
        .map(|sc| -> Result<_> {
            let signal = simulate_mono_plane(&sc.plane, &aperture, k_r)?;
            let clean = op_image(&signal, &term)?;
            Ok((signal, clean))
        })
        .collect::<Result<_>>()?;
    jobs.par_iter()
        .map(|&(s, l, t)| -> Result<Sample> {
            let sc = &scenes[s];
            let index = (sc.scene_id * per_scene + l * cfg.trajectories_per_scene + t) as u64;
            let seed = entry_seed(cfg.seed, index);
            let std = cfg.error_levels[l];
            let base = (0..cfg.mix_group_size)
                .map(|g| gen_trajectory(cfg.rows, std, cfg.smoothness, seed.wrapping_add(g as u64)))
                .collect::<handsar_core::Result<Vec<_>>>()?;
            let trajectory = mix_mean(&base)?;
            let screen = traj_to_phase_screen(&trajectory, k_r, cfg.cols)?;
            let noise = cfg.snr_db.map(|snr_db| NoiseSpec {
                snr_db,
                seed: seed ^ 0x5eed,
            });
            let (clean_signal, clean) = &cleans[s];
            let signal = corrupt_signal(clean_signal, &screen, noise)?;
            let distorted = op_image(&signal, &term)?;
            Ok(Sample {
                scene_id: sc.scene_id,
                letter: sc.letter,
                split: cfg.split_of(sc.scene_id),
                trajectory_seed: seed,
                error_std_m: std,
                trajectory,
                signal,
                distorted,
                clean: clean.clone(),
            })
        })
        .collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))
}

/// Synthesizes the corpus and writes grids, trajectories and the manifest
/// under `dir`. Paths in the manifest are relative to `dir`.
pub fn generate_dataset(scenes: &[SceneSpec], cfg: &DatasetConfig, dir: &Path) -> Result<DatasetManifest> {
    let samples = synthesize(scenes, cfg)?;
    for sub in ["clean", "distorted", "trajectories"] {
        create_dir(&dir.join(sub))?;
    }
    for sc in scenes {
        let clean = samples.iter().find(|s| s.scene_id == sc.scene_id);
        if let Some(s) = clean {
            write_grid(&dir.join(format!("clean/scene{:03}.csg", sc.scene_id)), &s.clean)?;
        }
    }
    let entries = samples
        .par_iter()
        .enumerate()
        .map(|(n, s)| -> Result<ManifestEntry> {
            let clean_path = format!("clean/scene{:03}.csg", s.scene_id);
            let distorted_path = format!("distorted/{n:05}_scene{:03}.csg", s.scene_id);
            let trajectory_path = format!("trajectories/{n:05}_scene{:03}.trj", s.scene_id);
            write_grid(&dir.join(&distorted_path), &s.distorted)?;
            write_trajectory(&dir.join(&trajectory_path), &s.trajectory)?;
            Ok(ManifestEntry {
                scene_id: s.scene_id,
                letter: s.letter,
                split: s.split,
                trajectory_seed: s.trajectory_seed,
                error_std_m: s.error_std_m,
                applied_std_m: s.trajectory.std(),
                clean_path,
                distorted_path,
                trajectory_path,
                clean_norm: normalize::normalize_minmax(&s.clean).1.into(),
                distorted_norm: normalize::normalize_minmax(&s.distorted).1.into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        entries,
    };
    manifest.write(dir)?;
    Ok(manifest)
}

/// Normalized training pairs of one split, read from disk. Each image is
/// normalized with its own extrema.
pub fn load_pairs(manifest: &DatasetManifest, dir: &Path, split: Split) -> Result<Vec<TrainPair>> {
    let entries: Vec<&ManifestEntry> = manifest.entries_in(split).collect();
    entries
        .par_iter()
        .map(|e| {
            let distorted = read_grid(&dir.join(&e.distorted_path))?;
            let clean = read_grid(&dir.join(&e.clean_path))?;
            Ok(TrainPair {
                input: normalize::normalize_minmax(&distorted).0,
                target: normalize::normalize_minmax(&clean).0,
            })
        })
        .collect()
}

/// Raw `(distorted, clean)` images of one split, read from disk.
pub fn load_raw(manifest: &DatasetManifest, dir: &Path, split: Split) -> Result<Vec<(ComplexGrid, ComplexGrid)>> {
    let entries: Vec<&ManifestEntry> = manifest.entries_in(split).collect();
    entries
        .par_iter()
        .map(|e| Ok((read_grid(&dir.join(&e.distorted_path))?, read_grid(&dir.join(&e.clean_path))?)))
        .collect()
}
