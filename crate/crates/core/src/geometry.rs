//! Aperture and waveform configuration, plus the spatial-frequency grid used
//! by frequency-domain imaging.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Propagation speed (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Wavenumber `k = 2πf/c` (rad/m) of a temporal frequency `f` (Hz).
pub fn wavenumber(frequency_hz: f64) -> f64 {
    2.0 * PI * frequency_hz / SPEED_OF_LIGHT
}

/// Uniform planar (virtual) aperture and the depth of the imaging plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApertureConfig {
    /// Element count along the scan axis `x`.
    pub nx: usize,
    /// Element count along the array axis `y`.
    pub ny: usize,
    /// Element pitch along `x` (m).
    pub dx: f64,
    /// Element pitch along `y` (m).
    pub dy: f64,
    /// Depth `r` of the imaging plane (m).
    pub z_target: f64,
}

impl ApertureConfig {
    /// 64x64 aperture at 1 mm pitch imaging a plane 0.3 m away.
    pub fn desk() -> Self {
        Self {
            nx: 64,
            ny: 64,
            dx: 1e-3,
            dy: 1e-3,
            z_target: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::invalid("aperture", "nx and ny must be at least 2"));
        }
        if !(self.dx > 0.0 && self.dy > 0.0 && self.dx.is_finite() && self.dy.is_finite()) {
            return Err(Error::invalid("aperture", "element pitch must be positive"));
        }
        if !(self.z_target > 0.0 && self.z_target.is_finite()) {
            return Err(Error::invalid("aperture", "z_target must be positive"));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Physical `x` coordinate of row `i`; row `nx/2` sits at `x = 0`.
    pub fn x_coord(&self, i: usize) -> f64 {
        (i as f64 - (self.nx / 2) as f64) * self.dx
    }

    /// Physical `y` coordinate of column `j`; column `ny/2` sits at `y = 0`.
    pub fn y_coord(&self, j: usize) -> f64 {
        (j as f64 - (self.ny / 2) as f64) * self.dy
    }

    /// Nearest grid cell of a physical `(x, y)` position, if it lies inside.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let i = (x / self.dx).round() + (self.nx / 2) as f64;
        let j = (y / self.dy).round() + (self.ny / 2) as f64;
        if i < 0.0 || j < 0.0 || i >= self.nx as f64 || j >= self.ny as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }
}

/// FMCW chirp parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadarConfig {
    /// Start frequency (Hz).
    pub f_start: f64,
    /// Chirp slope (Hz/s).
    pub chirp_slope: f64,
    /// ADC samples per chirp.
    pub n_samples: usize,
    /// ADC sampling rate (samples/s).
    pub f_adc: f64,
}

impl RadarConfig {
    /// 77 GHz start, 38.5 MHz/us slope, 256 samples at 8 Msps.
    pub fn mmwave_77ghz() -> Self {
        Self {
            f_start: 77e9,
            chirp_slope: 38.5e12,
            n_samples: 256,
            f_adc: 8e6,
        }
    }

    /// A single-frequency configuration (one ADC sample at `f`).
    pub fn monochromatic(f: f64) -> Self {
        Self {
            f_start: f,
            chirp_slope: 1.0,
            n_samples: 1,
            f_adc: 1.0,
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.chirp_slope * self.n_samples as f64 / self.f_adc
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("radar", "n_samples must be positive"));
        }
        if !(self.f_start > 0.0 && self.f_adc > 0.0) {
            return Err(Error::invalid("radar", "f_start and f_adc must be positive"));
        }
        if !(self.bandwidth() > 0.0) {
            return Err(Error::invalid("radar", "bandwidth must be positive"));
        }
        Ok(())
    }

    /// Instantaneous frequency of every ADC sample (Hz).
    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_samples)
            .map(|n| self.f_start + self.chirp_slope * n as f64 / self.f_adc)
            .collect()
    }

    pub fn wavenumbers(&self) -> Vec<f64> {
        self.frequencies().into_iter().map(wavenumber).collect()
    }
}

/// Spatial frequencies of an `n`-point DFT with sample pitch `d`, in natural
/// DFT order: `2π·m/(n·d)` for `m = 0, 1, …, ⌈n/2⌉−1, −⌊n/2⌋, …, −1`.
pub fn dft_frequencies(n: usize, d: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let m = if i < n.div_ceil(2) { i as f64 } else { i as f64 - n as f64 };
            2.0 * PI * m / (n as f64 * d)
        })
        .collect()
}

/// Index into natural DFT order of position `i` in the centered (shifted) view.
pub fn centered_to_natural(n: usize, i: usize) -> usize {
    (i + n.div_ceil(2)) % n
}

/// Spatial-frequency grid with the monostatic dispersion relation
/// `kz = sqrt(4k² − kx² − ky²)`.
#[derive(Clone, Debug)]
pub struct WavenumberGrid {
    pub nx: usize,
    pub ny: usize,
    /// Spatial frequencies along `x`, natural DFT order (rad/m).
    pub kx: Vec<f64>,
    /// Spatial frequencies along `y`, natural DFT order (rad/m).
    pub ky: Vec<f64>,
    /// Row-major `nx × ny`; zero on evanescent cells.
    pub kz: Vec<f64>,
    /// Row-major `nx × ny`; true where `kx² + ky² ≥ 4k²`.
    pub evanescent: Vec<bool>,
    pub k_r: f64,
}

impl WavenumberGrid {
    pub fn kz_at(&self, i: usize, j: usize) -> f64 {
        self.kz[i * self.ny + j]
    }

    pub fn is_evanescent(&self, i: usize, j: usize) -> bool {
        self.evanescent[i * self.ny + j]
    }

    pub fn evanescent_fraction(&self) -> f64 {
        self.evanescent.iter().filter(|&&m| m).count() as f64 / self.evanescent.len() as f64
    }

    /// `kz` rearranged so the zero frequency sits at the center.
    pub fn centered_kz(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.kz.len());
        for i in 0..self.nx {
            let si = centered_to_natural(self.nx, i);
            for j in 0..self.ny {
                out.push(self.kz[si * self.ny + centered_to_natural(self.ny, j)]);
            }
        }
        out
    }
}

pub fn build_wavenumber_grid(aperture: &ApertureConfig, k_r: f64) -> Result<WavenumberGrid> {
    aperture.validate()?;
    if !(k_r > 0.0 && k_r.is_finite()) {
        return Err(Error::invalid("k_r", format!("must be positive, got {k_r}")));
    }
    let kx = dft_frequencies(aperture.nx, aperture.dx);
    let ky = dft_frequencies(aperture.ny, aperture.dy);
    let four_k2 = 4.0 * k_r * k_r;
    let mut kz = Vec::with_capacity(aperture.nx * aperture.ny);
    let mut evanescent = Vec::with_capacity(aperture.nx * aperture.ny);
    for &kxi in &kx {
        for &kyj in &ky {
            let s = four_k2 - kxi * kxi - kyj * kyj;
            if s > 0.0 {
                kz.push(s.sqrt());
                evanescent.push(false);
            } else {
                kz.push(0.0);
                evanescent.push(true);
            }
        }
    }
    Ok(WavenumberGrid {
        nx: aperture.nx,
        ny: aperture.ny,
        kx,
        ky,
        kz,
        evanescent,
        k_r,
    })
}
