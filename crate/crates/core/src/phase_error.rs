//! Handheld trajectory models, range-deviation phase screens, and signal
//! corruption.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::ComplexGrid;

/// Range-axis deviation `dz` (m) at every scan position.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dz: Vec<f64>,
    pub rng_seed: u64,
}

impl Trajectory {
    pub fn new(dz: Vec<f64>, rng_seed: u64) -> Self {
        Self { dz, rng_seed }
    }

    pub fn zeros(nx: usize) -> Self {
        Self::new(vec![0.0; nx], 0)
    }

    pub fn len(&self) -> usize {
        self.dz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dz.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.dz.is_empty() {
            return 0.0;
        }
        self.dz.iter().sum::<f64>() / self.dz.len() as f64
    }

    /// Population standard deviation of `dz`.
    pub fn std(&self) -> f64 {
        if self.dz.is_empty() {
            return 0.0;
        }
        let m = self.mean();
        (self.dz.iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.dz.len() as f64).sqrt()
    }

    pub fn mean_removed(&self) -> Trajectory {
        let m = self.mean();
        Trajectory::new(self.dz.iter().map(|v| v - m).collect(), self.rng_seed)
    }

    pub fn negated(&self) -> Trajectory {
        Trajectory::new(self.dz.iter().map(|v| -v).collect(), self.rng_seed)
    }
}

fn gaussian_kernel(length: f64) -> Vec<f64> {
    let half = (3.0 * length).ceil() as isize;
    let w: Vec<f64> = (-half..=half)
        .map(|t| (-(t as f64).powi(2) / (2.0 * length * length)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Smooth zero-mean Gaussian deviation along `x`: white draws filtered by a
/// Gaussian kernel with standard deviation `smoothness` (in scan positions),
/// then shifted and scaled to sample mean 0 and sample std `sigma`.
pub fn gen_trajectory(nx: usize, sigma: f64, smoothness: f64, seed: u64) -> Result<Trajectory> {
    if nx == 0 {
        return Err(Error::Empty("trajectory"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", format!("must be non-negative, got {sigma}")));
    }
    if !(smoothness >= 1.0 && smoothness.is_finite()) {
        return Err(Error::invalid("smoothness", format!("must be at least 1, got {smoothness}")));
    }
    if sigma == 0.0 {
        return Ok(Trajectory::new(vec![0.0; nx], seed));
    }
    let kernel = gaussian_kernel(smoothness);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f64> = (0..nx + kernel.len() - 1)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let smooth: Vec<f64> = (0..nx)
        .map(|i| kernel.iter().zip(&white[i..]).map(|(w, v)| w * v).sum())
        .collect();
    let mut traj = Trajectory::new(smooth, seed).mean_removed();
    let s = traj.std();
    if s > 0.0 {
        traj.dz.iter_mut().for_each(|v| *v *= sigma / s);
    }
    Ok(traj)
}

/// Pointwise mean of equally long trajectories. The result carries the seed
/// of the first input.
pub fn mix_mean(trajs: &[Trajectory]) -> Result<Trajectory> {
    let first = trajs.first().ok_or(Error::Empty("trajectory list"))?;
    let n = first.len();
    if let Some(bad) = trajs.iter().find(|t| t.len() != n) {
        return Err(Error::LengthMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    let count = trajs.len() as f64;
    let dz = (0..n)
        .map(|i| trajs.iter().map(|t| t.dz[i]).sum::<f64>() / count)
        .collect();
    Ok(Trajectory::new(dz, first.rng_seed))
}

/// Unit-modulus multiplicative factor on an `nx × ny` signal grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseScreen {
    pub grid: ComplexGrid,
}

impl PhaseScreen {
    pub fn identity(rows: usize, cols: usize) -> Self {
        Self {
            grid: ComplexGrid::ones(rows, cols),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    /// Largest deviation of `|Φ|` from one.
    pub fn max_modulus_error(&self) -> f64 {
        self.grid
            .as_slice()
            .iter()
            .map(|v| (v.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Screen `e^{−j·2·k_r·dz[x]}` shared by every column of row `x`.
pub fn traj_to_phase_screen(traj: &Trajectory, k_r: f64, ny: usize) -> Result<PhaseScreen> {
    if traj.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    if ny == 0 {
        return Err(Error::Empty("phase screen"));
    }
    let row: Vec<Complex64> = traj
        .dz
        .iter()
        .map(|&d| Complex64::from_polar(1.0, -2.0 * k_r * d))
        .collect();
    Ok(PhaseScreen {
        grid: ComplexGrid::from_fn(traj.len(), ny, |i, _| row[i]),
    })
}

/// Additive complex white Gaussian noise at a given SNR (dB), measured
/// against the mean per-cell power of the clean signal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub seed: u64,
}

/// `screen ⊙ S`, plus noise when requested.
pub fn corrupt_signal(
    signal: &ComplexGrid,
    screen: &PhaseScreen,
    noise: Option<NoiseSpec>,
) -> Result<ComplexGrid> {
    let mut out = screen.grid.hadamard(signal)?;
    if let Some(spec) = noise {
        if !spec.snr_db.is_finite() {
            return Err(Error::invalid("snr_db", "must be finite"));
        }
        let p_signal = signal.norm_sqr() / signal.len() as f64;
        let std = (p_signal / 10f64.powf(spec.snr_db / 10.0) / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for v in out.as_mut_slice() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += Complex64::new(re * std, im * std);
        }
    }
    Ok(out)
}

/// Conjugate of the screen: the compensator that undoes it exactly.
pub fn oracle_compensator(screen: &PhaseScreen) -> PhaseScreen {
    PhaseScreen {
        grid: screen.grid.conj(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::wavenumber;
    use proptest::prelude::*;

    #[test]
    fn zero_sigma_gives_zero_trajectory() {
        let t = gen_trajectory(50, 0.0, 5.0, 1).unwrap();
        assert!(t.dz.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = gen_trajectory(64, 5e-4, 5.0, 42).unwrap();
        let b = gen_trajectory(64, 5e-4, 5.0, 42).unwrap();
        let c = gen_trajectory(64, 5e-4, 5.0, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.dz, c.dz);
    }

    #[test]
    fn sample_std_within_band() {
        for seed in 0..100 {
            let t = gen_trajectory(200, 5e-4, 5.0, seed).unwrap();
            // population std over the samples, computed independently
            let m: f64 = t.dz.iter().sum::<f64>() / 200.0;
            let s = (t.dz.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 200.0).sqrt();
            assert!((4.5e-4..=5.5e-4).contains(&s), "seed {seed}: std {s}");
            assert!(m.abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(gen_trajectory(10, -1.0, 5.0, 0).is_err());
        assert!(gen_trajectory(10, 1e-3, 0.5, 0).is_err());
        assert!(gen_trajectory(0, 1e-3, 5.0, 0).is_err());
    }

    #[test]
    fn mixing_rules() {
        let t = gen_trajectory(32, 3e-4, 5.0, 7).unwrap();
        assert_eq!(mix_mean(std::slice::from_ref(&t)).unwrap().dz, t.dz);
        let z = mix_mean(&[t.clone(), t.negated()]).unwrap();
        assert!(z.dz.iter().all(|&v| v == 0.0));
        assert!(mix_mean(&[]).is_err());
        assert!(mix_mean(&[t, Trajectory::zeros(3)]).is_err());
    }

    #[test]
    fn mean_of_five_shrinks_std() {
        let sigma = 5e-4;
        let mut ratios = Vec::new();
        for e in 0..100u64 {
            let group: Vec<_> = (0..5)
                .map(|i| gen_trajectory(200, sigma, 5.0, e * 5 + i).unwrap())
                .collect();
            ratios.push(mix_mean(&group).unwrap().std() / (sigma / 5f64.sqrt()));
        }
        let avg = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((0.8..=1.2).contains(&avg), "mean ratio {avg}");
    }

    #[test]
    fn screen_values() {
        let k = wavenumber(77e9);
        let ones = traj_to_phase_screen(&Trajectory::zeros(4), k, 3).unwrap();
        assert_eq!(ones, PhaseScreen::identity(4, 3));

        let quarter = std::f64::consts::PI / (2.0 * k);
        let t = Trajectory::new(vec![0.0, quarter], 0);
        let s = traj_to_phase_screen(&t, k, 5).unwrap();
        for j in 0..5 {
            assert!((s.grid.get(1, j) - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
            assert_eq!(s.grid.get(1, j), s.grid.get(1, 0));
        }
        let prod = s.grid.hadamard(&oracle_compensator(&s).grid).unwrap();
        assert!(prod.as_slice().iter().all(|v| (v - 1.0).norm() < 1e-12));
    }

    #[test]
    fn corruption_round_trip_and_noise() {
        let k = wavenumber(77e9);
        let s = ComplexGrid::from_fn(8, 6, |i, j| Complex64::new(i as f64 - 3.0, 0.5 * j as f64));
        let t = gen_trajectory(8, 5e-4, 2.0, 3).unwrap();
        let screen = traj_to_phase_screen(&t, k, 6).unwrap();
        assert_eq!(corrupt_signal(&s, &PhaseScreen::identity(8, 6), None).unwrap(), s);
        let c = corrupt_signal(&s, &screen, None).unwrap();
        assert!((c.norm_l2() - s.norm_l2()).abs() < 1e-12 * s.norm_l2());
        let back = c.hadamard(&oracle_compensator(&screen).grid).unwrap();
        assert!(back.relative_error(&s).unwrap() < 1e-14);

        let big = ComplexGrid::ones(64, 64);
        let noisy = corrupt_signal(&big, &PhaseScreen::identity(64, 64), Some(NoiseSpec { snr_db: 10.0, seed: 9 })).unwrap();
        let p_noise = noisy.sub(&big).unwrap().norm_sqr() / 4096.0;
        assert!((p_noise - 0.1).abs() < 0.01, "noise power {p_noise}");
        assert!(corrupt_signal(&s, &PhaseScreen::identity(4, 4), None).is_err());
    }

    proptest! {
        #[test]
        fn screens_are_unit_modulus(seed in 0u64..1000, sigma in 0.0f64..2e-3) {
            let t = gen_trajectory(16, sigma, 3.0, seed).unwrap();
            let s = traj_to_phase_screen(&t, wavenumber(77e9), 4).unwrap();
            prop_assert!(s.max_modulus_error() < 1e-12);
        }
    }
}
