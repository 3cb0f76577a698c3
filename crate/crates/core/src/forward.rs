//! Multistatic MIMO-SAR simulation of point-scatterer scenes and the
//! multistatic-to-monostatic conversion onto the virtual aperture.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{ApertureConfig, RadarConfig};
use crate::grid::ComplexGrid;
use crate::imaging::{build_phase_term, op_generate};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scatterer {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub sigma: Complex64,
}

impl Scatterer {
    pub fn new(x: f64, y: f64, z: f64, sigma: Complex64) -> Self {
        Self { x, y, z, sigma }
    }

    #[inline]
    fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// A set of isotropic point scatterers in front of the aperture plane.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene {
    pub scatterers: Vec<Scatterer>,
}

impl Scene {
    pub fn new(scatterers: Vec<Scatterer>) -> Self {
        Self { scatterers }
    }

    pub fn validate(&self) -> Result<()> {
        for (index, s) in self.scatterers.iter().enumerate() {
            if !(s.z > 0.0) {
                return Err(Error::ScattererBehindAperture { index, z: s.z });
            }
            if !(s.x.is_finite() && s.y.is_finite() && s.z.is_finite())
                || !(s.sigma.re.is_finite() && s.sigma.im.is_finite())
            {
                return Err(Error::NonFinite("scene"));
            }
        }
        Ok(())
    }

    /// Accumulates reflectivities onto the nearest cell of the aperture grid
    /// (depth is ignored). Scatterers outside the grid are dropped.
    pub fn rasterize(&self, aperture: &ApertureConfig) -> ComplexGrid {
        let mut plane = ComplexGrid::zeros(aperture.nx, aperture.ny);
        for s in &self.scatterers {
            if let Some((i, j)) = aperture.cell_of(s.x, s.y) {
                let v = plane.get(i, j) + s.sigma;
                plane.set(i, j, v);
            }
        }
        plane
    }

    /// Scene `α·self + β·other` (scatterers concatenated, reflectivities scaled).
    pub fn combine(&self, alpha: Complex64, other: &Scene, beta: Complex64) -> Scene {
        let mut out: Vec<_> = self
            .scatterers
            .iter()
            .map(|s| Scatterer { sigma: s.sigma * alpha, ..*s })
            .collect();
        out.extend(other.scatterers.iter().map(|s| Scatterer { sigma: s.sigma * beta, ..*s }));
        Scene::new(out)
    }
}

/// Linear MIMO array swept along `x`. Element positions are `(x, y)` offsets
/// on the `z = 0` plane, relative to the current scan position.
#[derive(Clone, Debug, PartialEq)]
pub struct MimoLayout {
    pub tx: Vec<(f64, f64)>,
    pub rx: Vec<(f64, f64)>,
    pub scan_x: Vec<f64>,
}

impl MimoLayout {
    /// Two transmitters at the array ends and `ny/2` receivers at `2·dy`
    /// pitch; the `2·(ny/2)` phase centers tile the `ny` aperture columns at
    /// pitch `dy`. Scan positions coincide with the aperture rows.
    pub fn uniform_linear(aperture: &ApertureConfig) -> Result<Self> {
        aperture.validate()?;
        if aperture.ny % 2 != 0 {
            return Err(Error::invalid("aperture", "ny must be even for the two-transmitter layout"));
        }
        let half = (aperture.ny / 2) as f64 * aperture.dy;
        let tx = vec![(0.0, -half), (0.0, half)];
        let rx = (0..aperture.ny / 2)
            .map(|r| (0.0, -half + 2.0 * r as f64 * aperture.dy))
            .collect();
        let scan_x = (0..aperture.nx).map(|i| aperture.x_coord(i)).collect();
        Ok(Self { tx, rx, scan_x })
    }

    pub fn validate(&self) -> Result<()> {
        if self.tx.is_empty() || self.rx.is_empty() || self.scan_x.is_empty() {
            return Err(Error::Empty("MIMO layout"));
        }
        Ok(())
    }

    pub fn phase_centers_per_scan(&self) -> usize {
        self.tx.len() * self.rx.len()
    }
}

/// Received samples indexed by `(scan, tx, rx, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultistaticSignal {
    pub n_scan: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    pub k_values: Vec<f64>,
    data: Vec<Complex64>,
}

impl MultistaticSignal {
    #[inline]
    fn index(&self, scan: usize, tx: usize, rx: usize, k: usize) -> usize {
        ((scan * self.n_tx + tx) * self.n_rx + rx) * self.k_values.len() + k
    }

    #[inline]
    pub fn get(&self, scan: usize, tx: usize, rx: usize, k: usize) -> Complex64 {
        self.data[self.index(scan, tx, rx, k)]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub(crate) fn check_layout(&self, layout: &MimoLayout) -> Result<()> {
        let want = (layout.scan_x.len(), layout.tx.len(), layout.rx.len());
        let got = (self.n_scan, self.n_tx, self.n_rx);
        if want != got {
            return Err(Error::invalid(
                "layout",
                format!("signal has (scan, tx, rx) = {got:?}, layout has {want:?}"),
            ));
        }
        Ok(())
    }
}

#[inline]
fn dist(p: [f64; 3], q: [f64; 3]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

/// Received signal over the radar's chirp wavenumbers:
/// `s = Σ σ · e^{−jk(R_Tx + R_Rx)}` with no amplitude spreading.
pub fn simulate_multistatic(
    scene: &Scene,
    layout: &MimoLayout,
    radar: &RadarConfig,
) -> Result<MultistaticSignal> {
    radar.validate()?;
    simulate_multistatic_at(scene, layout, &radar.wavenumbers())
}

/// As [`simulate_multistatic`] for an explicit list of wavenumbers.
pub fn simulate_multistatic_at(
    scene: &Scene,
    layout: &MimoLayout,
    k_values: &[f64],
) -> Result<MultistaticSignal> {
    scene.validate()?;
    layout.validate()?;
    if k_values.is_empty() {
        return Err(Error::Empty("wavenumber list"));
    }
    let per_scan = layout.tx.len() * layout.rx.len() * k_values.len();
    let blocks: Vec<Vec<Complex64>> = layout
        .scan_x
        .par_iter()
        .map(|&sx| {
            let mut out = Vec::with_capacity(per_scan);
            for &(txx, txy) in &layout.tx {
                let tpos = [sx + txx, txy, 0.0];
                for &(rxx, rxy) in &layout.rx {
                    let rpos = [sx + rxx, rxy, 0.0];
                    for &k in k_values {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for s in &scene.scatterers {
                            let p = s.position();
                            let path = dist(tpos, p) + dist(rpos, p);
                            acc += s.sigma * Complex64::from_polar(1.0, -k * path);
                        }
                        out.push(acc);
                    }
                }
            }
            out
        })
        .collect();
    Ok(MultistaticSignal {
        n_scan: layout.scan_x.len(),
        n_tx: layout.tx.len(),
        n_rx: layout.rx.len(),
        k_values: k_values.to_vec(),
        data: blocks.concat(),
    })
}

/// Monostatic signal recorded directly at every virtual aperture cell:
/// `ŝ(x', y') = Σ σ · e^{−j2kR}`.
pub fn simulate_monostatic(scene: &Scene, aperture: &ApertureConfig, k: f64) -> Result<ComplexGrid> {
    scene.validate()?;
    aperture.validate()?;
    Ok(ComplexGrid::from_fn(aperture.nx, aperture.ny, |i, j| {
        let e = [aperture.x_coord(i), aperture.y_coord(j), 0.0];
        scene
            .scatterers
            .iter()
            .map(|s| s.sigma * Complex64::from_polar(1.0, -2.0 * k * dist(e, s.position())))
            .sum()
    }))
}

/// Phase applied by the multistatic-to-monostatic correction for a
/// transmitter–receiver separation `(d_x, d_y)`: `−k(d_x² + d_y²)/(4 z0)`.
pub fn mono_correction_phase(k: f64, d_x: f64, d_y: f64, z0: f64) -> f64 {
    -k * (d_x * d_x + d_y * d_y) / (4.0 * z0)
}

const GRID_TOL: f64 = 1e-6;

fn snap(coord: f64, pitch: f64, n: usize) -> Option<usize> {
    let f = coord / pitch + (n / 2) as f64;
    let idx = f.round();
    if (f - idx).abs() > GRID_TOL || idx < 0.0 || idx >= n as f64 {
        return None;
    }
    Some(idx as usize)
}

/// Multiplies every sample by the separation correction and places it on the
/// virtual cell of its phase center (the tx–rx midpoint). Returns one grid
/// per wavenumber. Cells without a phase center stay zero.
pub fn mono_convert(
    sig: &MultistaticSignal,
    layout: &MimoLayout,
    aperture: &ApertureConfig,
    z0: f64,
) -> Result<Vec<ComplexGrid>> {
    if !(z0 > 0.0 && z0.is_finite()) {
        return Err(Error::invalid("z0", format!("reference depth must be positive, got {z0}")));
    }
    aperture.validate()?;
    sig.check_layout(layout)?;

    let mut cells = Vec::with_capacity(sig.n_scan * sig.n_tx * sig.n_rx);
    let mut occupied = vec![false; aperture.nx * aperture.ny];
    for &sx in &layout.scan_x {
        for &(txx, txy) in &layout.tx {
            for &(rxx, rxy) in &layout.rx {
                let cx = sx + 0.5 * (txx + rxx);
                let cy = 0.5 * (txy + rxy);
                let (Some(i), Some(j)) = (snap(cx, aperture.dx, aperture.nx), snap(cy, aperture.dy, aperture.ny))
                else {
                    return Err(Error::OffGridPhaseCenter { x: cx, y: cy });
                };
                let slot = &mut occupied[i * aperture.ny + j];
                if *slot {
                    return Err(Error::PhaseCenterCollision { row: i, col: j });
                }
                *slot = true;
                cells.push((i, j, txx - rxx, txy - rxy));
            }
        }
    }

    let nk = sig.k_values.len();
    let mut out = Vec::with_capacity(nk);
    for (ki, &k) in sig.k_values.iter().enumerate() {
        let mut grid = ComplexGrid::zeros(aperture.nx, aperture.ny);
        for (n, &(i, j, ddx, ddy)) in cells.iter().enumerate() {
            let phase = mono_correction_phase(k, ddx, ddy, z0);
            let v = sig.as_slice()[n * nk + ki] * Complex64::from_polar(1.0, phase);
            grid.set(i, j, v);
        }
        out.push(grid);
    }
    Ok(out)
}

/// Monochromatic planar signal of a scene confined to the imaging plane:
/// exactly `G(scene_plane, M̄)` at depth `aperture.z_target`.
pub fn simulate_mono_plane(
    scene_plane: &ComplexGrid,
    aperture: &ApertureConfig,
    k_r: f64,
) -> Result<ComplexGrid> {
    if scene_plane.dims() != aperture.dims() {
        return Err(Error::DimensionMismatch {
            expected: aperture.dims(),
            found: scene_plane.dims(),
        });
    }
    let m_bar = build_phase_term(aperture, k_r, aperture.z_target)?.conj();
    op_generate(scene_plane, &m_bar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::wavenumber;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn single_element() -> MimoLayout {
        MimoLayout {
            tx: vec![(0.0, 0.0)],
            rx: vec![(0.0, 0.0)],
            scan_x: vec![0.0],
        }
    }

    #[test]
    fn single_scatterer_on_axis() {
        let k = wavenumber(77e9);
        let z0 = 0.25;
        let scene = Scene::new(vec![Scatterer::new(0.0, 0.0, z0, c(1.0, 0.0))]);
        let sig = simulate_multistatic_at(&scene, &single_element(), &[k]).unwrap();
        let want = Complex64::from_polar(1.0, -2.0 * k * z0);
        assert!((sig.get(0, 0, 0, 0) - want).norm() < 1e-12);
    }

    #[test]
    fn empty_scene_is_silent() {
        let ap = ApertureConfig {
            nx: 4,
            ny: 4,
            dx: 1e-3,
            dy: 1e-3,
            z_target: 0.3,
        };
        let layout = MimoLayout::uniform_linear(&ap).unwrap();
        let sig = simulate_multistatic(&Scene::default(), &layout, &RadarConfig::monochromatic(77e9)).unwrap();
        assert!(sig.as_slice().iter().all(|v| *v == c(0.0, 0.0)));
    }

    #[test]
    fn rejects_scatterer_at_aperture_plane() {
        let scene = Scene::new(vec![
            Scatterer::new(0.0, 0.0, 0.3, c(1.0, 0.0)),
            Scatterer::new(0.0, 0.0, 0.0, c(1.0, 0.0)),
        ]);
        let err = simulate_multistatic_at(&scene, &single_element(), &[1.0]).unwrap_err();
        assert_eq!(err, Error::ScattererBehindAperture { index: 1, z: 0.0 });
    }

    #[test]
    fn two_scatterers_superpose() {
        let ap = ApertureConfig {
            nx: 6,
            ny: 4,
            dx: 1e-3,
            dy: 1e-3,
            z_target: 0.3,
        };
        let layout = MimoLayout::uniform_linear(&ap).unwrap();
        let ks = [wavenumber(77e9), wavenumber(78e9)];
        let a = Scatterer::new(0.004, -0.002, 0.28, c(0.7, -0.2));
        let b = Scatterer::new(-0.01, 0.003, 0.33, c(-0.1, 1.1));
        let both = simulate_multistatic_at(&Scene::new(vec![a, b]), &layout, &ks).unwrap();
        let sa = simulate_multistatic_at(&Scene::new(vec![a]), &layout, &ks).unwrap();
        let sb = simulate_multistatic_at(&Scene::new(vec![b]), &layout, &ks).unwrap();
        for ((x, y), z) in both.as_slice().iter().zip(sa.as_slice()).zip(sb.as_slice()) {
            assert!((x - (y + z)).norm() < 1e-12);
        }
    }

    #[test]
    fn conjugating_reflectivity_only_conjugates_sigma() {
        let k = wavenumber(77e9);
        let z0 = 0.3;
        let sigma = c(0.3, 0.8);
        let s1 = Scene::new(vec![Scatterer::new(0.0, 0.0, z0, sigma)]);
        let s2 = Scene::new(vec![Scatterer::new(0.0, 0.0, z0, sigma.conj())]);
        let a = simulate_multistatic_at(&s1, &single_element(), &[k]).unwrap().get(0, 0, 0, 0);
        let b = simulate_multistatic_at(&s2, &single_element(), &[k]).unwrap().get(0, 0, 0, 0);
        let prop = Complex64::from_polar(1.0, -2.0 * k * z0);
        assert!((a - sigma * prop).norm() < 1e-12);
        assert!((b - sigma.conj() * prop).norm() < 1e-12);
    }

    #[test]
    fn colocated_conversion_is_identity() {
        let k = wavenumber(77e9);
        let ap = ApertureConfig {
            nx: 3,
            ny: 2,
            dx: 1e-3,
            dy: 1e-3,
            z_target: 0.3,
        };
        let layout = MimoLayout {
            tx: vec![(0.0, -1e-3)],
            rx: vec![(0.0, -1e-3)],
            scan_x: vec![-1e-3, 0.0, 1e-3],
        };
        let scene = Scene::new(vec![Scatterer::new(0.001, 0.0, 0.3, c(1.0, 0.0))]);
        let sig = simulate_multistatic_at(&scene, &layout, &[k]).unwrap();
        let grids = mono_convert(&sig, &layout, &ap, 0.3).unwrap();
        for s in 0..3 {
            assert_eq!(grids[0].get(s, 0), sig.get(s, 0, 0, 0));
            assert_eq!(grids[0].get(s, 1), c(0.0, 0.0));
        }
    }

    #[test]
    fn correction_phase_value() {
        let k = wavenumber(77e9);
        let got = mono_correction_phase(k, 2e-3, 0.0, 0.3);
        let want = -k * 4e-6 / 1.2;
        assert!((got - want).abs() <= 1e-15 * want.abs());
    }

    #[test]
    fn conversion_rejects_collisions_and_bad_depth() {
        let ap = ApertureConfig {
            nx: 2,
            ny: 4,
            dx: 1e-3,
            dy: 1e-3,
            z_target: 0.3,
        };
        // two tx-rx pairs with the same midpoint
        let layout = MimoLayout {
            tx: vec![(0.0, -1e-3), (0.0, 1e-3)],
            rx: vec![(0.0, 1e-3), (0.0, -1e-3)],
            scan_x: vec![0.0],
        };
        let scene = Scene::new(vec![Scatterer::new(0.0, 0.0, 0.3, c(1.0, 0.0))]);
        let sig = simulate_multistatic_at(&scene, &layout, &[1000.0]).unwrap();
        assert!(matches!(
            mono_convert(&sig, &layout, &ap, 0.3),
            Err(Error::PhaseCenterCollision { .. })
        ));
        assert!(mono_convert(&sig, &layout, &ap, 0.0).is_err());
    }

    #[test]
    fn uniform_layout_tiles_the_aperture() {
        let ap = ApertureConfig::desk();
        let layout = MimoLayout::uniform_linear(&ap).unwrap();
        assert_eq!(layout.phase_centers_per_scan(), ap.ny);
        let scene = Scene::new(vec![Scatterer::new(0.0, 0.0, 0.3, c(1.0, 0.0))]);
        let sig = simulate_multistatic_at(&scene, &layout, &[wavenumber(77e9)]).unwrap();
        let grids = mono_convert(&sig, &layout, &ap, 0.3).unwrap();
        assert!(grids[0].as_slice().iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn plane_simulation_checks_dims() {
        let ap = ApertureConfig::desk();
        let k = wavenumber(77e9);
        assert!(simulate_mono_plane(&ComplexGrid::zeros(32, 64), &ap, k).is_err());
        let z = ComplexGrid::zeros(64, 64);
        assert_eq!(simulate_mono_plane(&z, &ap, k).unwrap(), z);
    }
}
