//! Image formation: the range-migration operator pair (imaging `I` and
//! signal generation `G`), single-plane RMA, and direct back-projection.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft;
use crate::forward::{MimoLayout, MultistaticSignal};
use crate::geometry::{build_wavenumber_grid, ApertureConfig};
use crate::grid::ComplexGrid;

/// Matched-filter phase factors over the wavenumber grid: `e^{+j·kz·r}` on
/// propagating cells, zero on evanescent cells.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTerm {
    pub grid: ComplexGrid,
}

impl PhaseTerm {
    /// The conjugate term `M̄` used by signal generation.
    pub fn conj(&self) -> PhaseTerm {
        PhaseTerm {
            grid: self.grid.conj(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }
}

pub fn build_phase_term(aperture: &ApertureConfig, k_r: f64, r: f64) -> Result<PhaseTerm> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::invalid("r", format!("depth must be non-negative, got {r}")));
    }
    let wg = build_wavenumber_grid(aperture, k_r)?;
    let data = wg
        .kz
        .iter()
        .zip(&wg.evanescent)
        .map(|(&kz, &masked)| {
            if masked {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::from_polar(1.0, kz * r)
            }
        })
        .collect();
    Ok(PhaseTerm {
        grid: ComplexGrid::new(aperture.nx, aperture.ny, data)?,
    })
}

fn spectral_apply(x: &ComplexGrid, term: &PhaseTerm) -> Result<ComplexGrid> {
    x.ensure_same_dims(&term.grid)?;
    let mut out = x.clone();
    let (rows, cols) = out.dims();
    fft::spectral_filter_in_place(out.as_mut_slice(), rows, cols, term.grid.as_slice());
    Ok(out)
}

/// Imaging operator `I(S, M) = IFFT2[FFT2[S] ⊙ M]`.
pub fn op_image(signal: &ComplexGrid, m: &PhaseTerm) -> Result<ComplexGrid> {
    spectral_apply(signal, m)
}

/// Signal-generation operator `G(Σ, M̄) = IFFT2[FFT2[Σ] ⊙ M̄]`.
pub fn op_generate(image: &ComplexGrid, m_bar: &PhaseTerm) -> Result<ComplexGrid> {
    spectral_apply(image, m_bar)
}

/// Single-plane RMA reconstruction of a monostatic planar signal at `k_r`.
pub fn rma_reconstruct(
    signal: &ComplexGrid,
    aperture: &ApertureConfig,
    k_r: f64,
    r: f64,
) -> Result<ComplexGrid> {
    let m = build_phase_term(aperture, k_r, r)?;
    op_image(signal, &m)
}

/// RMA on the signal zero-padded to `factor` times its size, cropped back to
/// the aperture. Suppresses cyclic wraparound and sharpens the spectral
/// sampling of the matched filter; `factor == 1` is [`rma_reconstruct`].
pub fn rma_reconstruct_padded(
    signal: &ComplexGrid,
    aperture: &ApertureConfig,
    k_r: f64,
    r: f64,
    factor: usize,
) -> Result<ComplexGrid> {
    if factor == 0 {
        return Err(Error::invalid("factor", "padding factor must be at least 1"));
    }
    let (n, m) = (aperture.nx, aperture.ny);
    if signal.dims() != (n, m) {
        return Err(Error::invalid("signal", format!("expected {n}x{m}, got {:?}", signal.dims())));
    }
    if factor == 1 {
        return rma_reconstruct(signal, aperture, k_r, r);
    }
    let big = ApertureConfig {
        nx: n * factor,
        ny: m * factor,
        ..*aperture
    };
    // Offsets keep each cell's physical coordinate unchanged.
    let (oi, oj) = (big.nx / 2 - n / 2, big.ny / 2 - m / 2);
    let mut padded = ComplexGrid::zeros(big.nx, big.ny);
    for i in 0..n {
        for j in 0..m {
            padded.set(i + oi, j + oj, signal.get(i, j));
        }
    }
    let img = rma_reconstruct(&padded, &big, k_r, r)?;
    Ok(ComplexGrid::from_fn(n, m, |i, j| img.get(i + oi, j + oj)))
}

/// Voxel centers of every grid cell on the plane at depth `z`, row-major.
pub fn plane_voxels(aperture: &ApertureConfig, z: f64) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(aperture.nx * aperture.ny);
    for i in 0..aperture.nx {
        for j in 0..aperture.ny {
            out.push([aperture.x_coord(i), aperture.y_coord(j), z]);
        }
    }
    out
}

fn check_voxels(voxels: &[[f64; 3]]) -> Result<()> {
    if let Some(v) = voxels.iter().find(|v| !(v[2] > 0.0)) {
        return Err(Error::invalid("voxels", format!("depth must be positive, got {}", v[2])));
    }
    Ok(())
}

#[inline]
fn dist(p: [f64; 3], q: [f64; 3]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

/// Back-projection of a multistatic signal onto arbitrary voxels:
/// `σ̂(v) = Σ_{scan,tx,rx,k} s · e^{+jk(R_Tx + R_Rx)}`.
pub fn bpa_reconstruct(
    sig: &MultistaticSignal,
    layout: &MimoLayout,
    voxels: &[[f64; 3]],
) -> Result<Vec<Complex64>> {
    check_voxels(voxels)?;
    sig.check_layout(layout)?;
    let ks = &sig.k_values;
    Ok(voxels
        .par_iter()
        .map(|&v| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (s, &sx) in layout.scan_x.iter().enumerate() {
                for (t, &(txx, txy)) in layout.tx.iter().enumerate() {
                    let rt = dist([sx + txx, txy, 0.0], v);
                    for (r, &(rxx, rxy)) in layout.rx.iter().enumerate() {
                        let rr = dist([sx + rxx, rxy, 0.0], v);
                        for (ki, &k) in ks.iter().enumerate() {
                            acc += sig.get(s, t, r, ki) * Complex64::from_polar(1.0, k * (rt + rr));
                        }
                    }
                }
            }
            acc
        })
        .collect())
}

/// Back-projection of a monostatic planar signal at wavenumber `k`:
/// `σ̂(v) = Σ_{x',y'} s(x',y') · e^{+j2kR}`.
pub fn bpa_reconstruct_mono(
    signal: &ComplexGrid,
    aperture: &ApertureConfig,
    k: f64,
    voxels: &[[f64; 3]],
) -> Result<Vec<Complex64>> {
    check_voxels(voxels)?;
    if signal.dims() != aperture.dims() {
        return Err(Error::DimensionMismatch {
            expected: aperture.dims(),
            found: signal.dims(),
        });
    }
    Ok(voxels
        .par_iter()
        .map(|&v| {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..aperture.nx {
                let x = aperture.x_coord(i);
                for j in 0..aperture.ny {
                    let r = dist([x, aperture.y_coord(j), 0.0], v);
                    acc += signal.get(i, j) * Complex64::from_polar(1.0, 2.0 * k * r);
                }
            }
            acc
        })
        .collect())
}
