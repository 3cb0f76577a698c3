//! Per-subcommand configuration schemas.

use std::path::PathBuf;

use handsar_core::autofocus::ClassicConfig;
use handsar_core::geometry::wavenumber;
use handsar_core::ApertureConfig;
use handsar_io::dataset::DatasetConfig;
use handsar_io::scenes::LetterStyle;
use handsar_io::Split;
use handsar_nn::{IfnetArch, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Geometry {
    pub rows: usize,
    pub cols: usize,
    pub dx: f64,
    pub dy: f64,
    pub depth: f64,
    pub frequency_hz: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        let a = ApertureConfig::desk();
        Self {
            rows: a.nx,
            cols: a.ny,
            dx: a.dx,
            dy: a.dy,
            depth: a.z_target,
            frequency_hz: 77e9,
        }
    }
}

impl Geometry {
    pub fn aperture(&self) -> CliResult<ApertureConfig> {
        let a = ApertureConfig {
            nx: self.rows,
            ny: self.cols,
            dx: self.dx,
            dy: self.dy,
            z_target: self.depth,
        };
        a.validate().map_err(|e| CliError::Config(format!("geometry: {e}")))?;
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(CliError::Config("key `geometry.frequency_hz`: must be positive".into()));
        }
        Ok(a)
    }

    pub fn k_r(&self) -> f64 {
        wavenumber(self.frequency_hz)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Letter,
    Points,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSettings {
    pub kind: SceneKind,
    pub letter: char,
    /// Scatterer count for point scenes.
    pub count: usize,
    /// Border in cells kept free of point scatterers.
    pub margin: usize,
    pub style: LetterStyle,
    pub seed: u64,
}

impl Default for SceneSettings {
    fn default() -> Self {
        Self {
            kind: SceneKind::Letter,
            letter: 'E',
            count: 5,
            margin: 8,
            style: LetterStyle::default(),
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSettings {
    pub geometry: Geometry,
    pub scene: SceneSettings,
    pub output_dir: PathBuf,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self {
            geometry: Geometry::default(),
            scene: SceneSettings::default(),
            output_dir: "out/simulate".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErrorSettings {
    /// Standard deviation of each base trajectory (m).
    pub std_m: f64,
    pub smoothness: f64,
    pub mix_group_size: usize,
    pub seed: u64,
    pub snr_db: Option<f64>,
}

impl Default for ErrorSettings {
    fn default() -> Self {
        Self {
            std_m: 0.5e-3,
            smoothness: 5.0,
            mix_group_size: 1,
            seed: 1,
            snr_db: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptSettings {
    pub geometry: Geometry,
    /// Clean signal grid.
    pub input: PathBuf,
    pub error: ErrorSettings,
    pub output_dir: PathBuf,
}

impl Default for CorruptSettings {
    fn default() -> Self {
        Self {
            geometry: Geometry::default(),
            input: "out/simulate/signal.csg".into(),
            error: ErrorSettings::default(),
            output_dir: "out/corrupt".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImagingMethod {
    Rma,
    Bpa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageSettings {
    pub geometry: Geometry,
    pub input: PathBuf,
    pub method: ImagingMethod,
    /// RMA zero-padding factor; 1 keeps the cyclic transform.
    pub pad_factor: usize,
    pub output_dir: PathBuf,
}

impl Default for ImageSettings {
    fn default() -> Self {
        Self {
            geometry: Geometry::default(),
            input: "out/corrupt/distorted_signal.csg".into(),
            method: ImagingMethod::Rma,
            pad_factor: 1,
            output_dir: "out/image".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub mu: f64,
    pub rho: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let c = ClassicConfig::default();
        Self {
            mu: c.mu,
            rho: c.rho,
            lambda: c.lambda,
            gamma: c.gamma,
            max_iters: c.max_iters,
            tol: c.tol,
        }
    }
}

impl SolverSettings {
    pub fn classic(&self) -> ClassicConfig {
        ClassicConfig {
            mu: self.mu,
            rho: self.rho,
            lambda: self.lambda,
            gamma: self.gamma,
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutofocusSettings {
    pub geometry: Geometry,
    /// Distorted signal grid.
    pub input: PathBuf,
    /// Optional clean image for PSNR/SSIM reporting.
    pub reference: Option<PathBuf>,
    pub solver: SolverSettings,
    pub output_dir: PathBuf,
}

impl Default for AutofocusSettings {
    fn default() -> Self {
        Self {
            geometry: Geometry::default(),
            input: "out/corrupt/distorted_signal.csg".into(),
            reference: None,
            solver: SolverSettings::default(),
            output_dir: "out/autofocus".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSettings {
    pub dataset: DatasetConfig,
    pub scenes: SceneKind,
    /// Scatterers per scene when `scenes` is `points`.
    pub point_count: usize,
    pub output_dir: PathBuf,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            scenes: SceneKind::Letter,
            point_count: 5,
            output_dir: "out/dataset".into(),
        }
    }
}

/// Network settings; the image geometry comes from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub n_stages: usize,
    pub n_resblocks: usize,
    pub recenter: bool,
    pub init_mu: f64,
    pub init_rho: f64,
    pub init_lambda: f64,
    pub seed: u64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let a = IfnetArch::default();
        Self {
            n_stages: a.n_stages,
            n_resblocks: a.n_resblocks,
            recenter: a.recenter,
            init_mu: a.init_mu,
            init_rho: a.init_rho,
            init_lambda: a.init_lambda,
            seed: 0,
        }
    }
}

impl ModelSettings {
    pub fn arch(&self, data: &DatasetConfig) -> IfnetArch {
        IfnetArch {
            n_stages: self.n_stages,
            n_resblocks: self.n_resblocks,
            rows: data.rows,
            cols: data.cols,
            dx: data.dx,
            dy: data.dy,
            depth: data.depth,
            frequency_hz: data.frequency_hz,
            recenter: self.recenter,
            init_mu: self.init_mu,
            init_rho: self.init_rho,
            init_lambda: self.init_lambda,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub dataset_dir: PathBuf,
    pub model: ModelSettings,
    pub training: TrainConfig,
    pub output_dir: PathBuf,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            dataset_dir: "out/dataset".into(),
            model: ModelSettings::default(),
            training: TrainConfig::default(),
            output_dir: "out/train".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSettings {
    pub checkpoint: PathBuf,
    /// Distorted image grids.
    pub inputs: Vec<PathBuf>,
    /// Alternatively, every distorted image of one dataset split.
    pub dataset_dir: Option<PathBuf>,
    pub split: Split,
    pub output_dir: PathBuf,
}

impl Default for InferSettings {
    fn default() -> Self {
        Self {
            checkpoint: "out/train/model.ifn".into(),
            inputs: Vec::new(),
            dataset_dir: None,
            split: Split::Test,
            output_dir: "out/infer".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairPaths {
    pub output: PathBuf,
    pub reference: PathBuf,
    #[serde(default)]
    pub input: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub pairs: Vec<PairPaths>,
    /// JSON list of pairs, as written by `infer` on a dataset split.
    pub index: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            pairs: Vec::new(),
            index: None,
            output_dir: "out/eval".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSettings {
    pub dataset_dir: PathBuf,
    pub model: ModelSettings,
    pub training: TrainConfig,
    pub stages: Vec<usize>,
    pub resblocks: Vec<usize>,
    pub eval_split: Split,
    pub output_dir: PathBuf,
}

impl Default for AblateSettings {
    fn default() -> Self {
        Self {
            dataset_dir: "out/dataset".into(),
            model: ModelSettings::default(),
            training: TrainConfig::default(),
            stages: vec![2, 3],
            resblocks: vec![ModelSettings::default().n_resblocks],
            eval_split: Split::Test,
            output_dir: "out/ablate".into(),
        }
    }
}
