//! Image-quality metrics on amplitude images: PSNR, SSIM and entropy.

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, RealGrid};

/// Returned by [`psnr`] when the images are (numerically) identical.
pub const PSNR_SENTINEL_DB: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-20;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_RANGE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    /// Entropy of the evaluated image, in nats.
    pub entropy: f64,
}

fn same_dims(a: &RealGrid, b: &RealGrid) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    Ok(())
}

pub fn mse(a: &RealGrid, b: &RealGrid) -> Result<f64> {
    same_dims(a, b)?;
    let n = a.as_slice().len() as f64;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// `10·log10(peak² / MSE)`, or the sentinel when `MSE < 1e-20`.
pub fn psnr(a: &RealGrid, b: &RealGrid, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::invalid("peak", format!("must be positive, got {peak}")));
    }
    let e = mse(a, b)?;
    if e < MSE_FLOOR {
        return Ok(PSNR_SENTINEL_DB);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            let (di, dj) = (i as f64 - half, j as f64 - half);
            w.push((-(di * di + dj * dj) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mean local SSIM over every fully covered window position.
pub fn ssim(a: &RealGrid, b: &RealGrid) -> Result<f64> {
    same_dims(a, b)?;
    let (rows, cols) = a.dims();
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            rows,
            cols,
            window: SSIM_WINDOW,
        });
    }
    let w = gaussian_window();
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let (or, oc) = (rows - SSIM_WINDOW + 1, cols - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for r0 in 0..or {
        for c0 in 0..oc {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let wt = w[i * SSIM_WINDOW + j];
                    let x = a.get(r0 + i, c0 + j);
                    let y = b.get(r0 + i, c0 + j);
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (or * oc) as f64)
}

/// Shannon entropy (nats) of the energy distribution `a² / Σa²`.
pub fn image_entropy(a: &RealGrid) -> Result<f64> {
    if a.as_slice().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("image", "amplitudes must be finite and non-negative"));
    }
    let energy: f64 = a.as_slice().iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::invalid("image", "all-zero image has no entropy"));
    }
    Ok(-a
        .as_slice()
        .iter()
        .map(|v| v * v / energy)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>())
}

/// Min-max-normalized amplitude of a complex image.
pub fn amplitude_view(img: &ComplexGrid) -> RealGrid {
    img.amplitude().minmax_normalized()
}

/// PSNR and SSIM of `output` against `reference` on normalized amplitudes,
/// plus the entropy of `output`.
pub fn evaluate(output: &ComplexGrid, reference: &ComplexGrid) -> Result<MetricReport> {
    output.ensure_same_dims(reference)?;
    let a = amplitude_view(output);
    let b = amplitude_view(reference);
    let entropy = image_entropy(&output.amplitude()).unwrap_or(0.0);
    Ok(MetricReport {
        psnr_db: psnr(&a, &b, 1.0)?,
        ssim: ssim(&a, &b)?,
        entropy,
    })
}
