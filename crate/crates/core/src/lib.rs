//! Near-field mmWave SAR imaging under handheld motion errors: forward
//! simulation, RMA and back-projection imaging, phase-error injection,
//! classical autofocus, and image-quality metrics.

pub mod autofocus;
pub mod error;
pub mod fft;
pub mod forward;
pub mod geometry;
pub mod grid;
pub mod imaging;
pub mod metrics;
pub mod normalize;
pub mod phase_error;

pub use error::{Error, Result};
pub use geometry::{ApertureConfig, RadarConfig};
pub use grid::{ComplexGrid, RealGrid};
pub use num_complex::Complex64;
