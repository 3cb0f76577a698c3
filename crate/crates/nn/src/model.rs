//! The unfolded network: `K` stages, each an imaging module (gradient step
//! plus a convolutional proximal block) followed by a focusing module
//! (gradient step plus an encoder–ResBlock–decoder prior and a unit-modulus
//! projection).

use handsar_core::geometry::{wavenumber, ApertureConfig};
use handsar_core::grid::ComplexGrid;
use handsar_core::imaging::build_phase_term;
use handsar_core::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::complex::{from_planar, project_one, project_one_backward, to_planar, OperatorPair, C};
use crate::conv::{
    conv2d_sample, conv2d_sample_backward, tconv2d_sample, tconv2d_sample_backward, tconv_geom, ConvGeom,
};
use crate::error::{NnError, Result};
use crate::layers::{
    instance_norm_sample, instance_norm_sample_backward, inverse_softplus, relu_backward_in_place,
    relu_in_place, shrink_real, sigmoid, soft_threshold_backward_in_place, softplus, NormCache,
};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

pub const IMAGING_HIDDEN: usize = 8;
pub const ENCODER_CHANNELS: [usize; 2] = [32, 64];
pub const ENCODER_KERNEL: usize = 7;
pub const KERNEL: usize = 3;

/// Raw threshold used by [`UnfoldingModel::configure_identity`]; its
/// softplus is below `1e-26`.
pub const IDENTITY_THRESHOLD_RAW: f64 = -60.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfnetArch {
    pub n_stages: usize,
    pub n_resblocks: usize,
    pub rows: usize,
    pub cols: usize,
    pub dx: f64,
    pub dy: f64,
    /// Imaging-plane depth `r` (m).
    pub depth: f64,
    pub frequency_hz: f64,
    /// Map `[0, 1]`-normalized images to `[−1, 1]` before the first stage
    /// and back after the last.
    pub recenter: bool,
    pub init_mu: f64,
    pub init_rho: f64,
    pub init_lambda: f64,
}

impl Default for IfnetArch {
    fn default() -> Self {
        Self {
            n_stages: 5,
            n_resblocks: 4,
            rows: 64,
            cols: 64,
            dx: 1e-3,
            dy: 1e-3,
            depth: 0.3,
            frequency_hz: 77e9,
            recenter: true,
            init_mu: 0.5,
            init_rho: 0.5,
            init_lambda: 0.01,
        }
    }
}

impl IfnetArch {
    pub fn validate(&self) -> Result<()> {
        if self.n_stages == 0 {
            return Err(NnError::invalid("n_stages", "must be at least 1"));
        }
        if self.n_resblocks == 0 {
            return Err(NnError::invalid("n_resblocks", "must be at least 1"));
        }
        if self.rows == 0 || self.cols == 0 || self.rows % 4 != 0 || self.cols % 4 != 0 {
            return Err(NnError::invalid(
                "rows/cols",
                format!("grid {}x{} must be a positive multiple of 4", self.rows, self.cols),
            ));
        }
        for (name, v) in [
            ("init_mu", self.init_mu),
            ("init_rho", self.init_rho),
            ("init_lambda", self.init_lambda),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NnError::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.frequency_hz > 0.0) {
            return Err(NnError::invalid("frequency_hz", "must be positive"));
        }
        self.aperture().validate()?;
        Ok(())
    }

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

    #[inline]
    pub fn plane(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ConvIds {
    w: ParamId,
    b: ParamId,
    c_in: usize,
    c_out: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct NormIds {
    scale: ParamId,
    shift: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ResIds {
    a: ConvIds,
    b: ConvIds,
}

#[derive(Clone, Debug, PartialEq)]
struct StageIds {
    mu: ParamId,
    rho: ParamId,
    lambda: ParamId,
    b1a: ConvIds,
    b1b: ConvIds,
    b2a: ConvIds,
    b2b: ConvIds,
    e1: ConvIds,
    n1: NormIds,
    e2: ConvIds,
    n2: NormIds,
    res: Vec<ResIds>,
    d1: ConvIds,
    n3: NormIds,
    d2: ConvIds,
}

/// Spatial geometries shared by every stage.
#[derive(Clone, Copy, Debug)]
struct Geoms {
    img2: ConvGeom,
    img8: ConvGeom,
    enc1: ConvGeom,
    enc2: ConvGeom,
    res: ConvGeom,
    dec1: ConvGeom,
    dec2: ConvGeom,
}

impl Geoms {
    fn new(rows: usize, cols: usize) -> Result<Self> {
        let [c1, c2] = ENCODER_CHANNELS;
        let enc1 = ConvGeom::new(2, rows, cols, ENCODER_KERNEL, 2)?;
        let enc2 = ConvGeom::new(c1, enc1.ho, enc1.wo, KERNEL, 2)?;
        Ok(Self {
            img2: ConvGeom::new(2, rows, cols, KERNEL, 1)?,
            img8: ConvGeom::new(IMAGING_HIDDEN, rows, cols, KERNEL, 1)?,
            enc1,
            enc2,
            res: ConvGeom::new(c2, enc2.ho, enc2.wo, KERNEL, 1)?,
            dec1: tconv_geom(c1, enc2.ho, enc2.wo, KERNEL, 2)?,
            dec2: tconv_geom(2, enc1.ho, enc1.wo, KERNEL, 2)?,
        })
    }
}

/// Learnable parameters of a `K`-stage network plus the fixed operator pair.
#[derive(Clone, Debug)]
pub struct UnfoldingModel<T: Scalar> {
    pub arch: IfnetArch,
    pub params: ParamStore<T>,
    stages: Vec<StageIds>,
    ops: OperatorPair<T>,
    geoms: Geoms,
}

struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn uniform(&mut self, n: usize, bound: f64) -> Vec<T> {
        (0..n)
            .map(|_| T::of(self.rng.random_range(-bound..=bound)))
            .collect()
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, transposed: bool) -> ConvIds {
        let fan_in = if transposed { c_out * k * k } else { c_in * k * k };
        let bound = 1.0 / (fan_in as f64).sqrt();
        let shape = if transposed { [c_in, c_out, k, k] } else { [c_out, c_in, k, k] };
        let w = self.uniform(c_in * c_out * k * k, bound);
        let b = self.uniform(c_out, bound);
        ConvIds {
            w: self.store.add(format!("{name}.weight"), &shape, w),
            b: self.store.add(format!("{name}.bias"), &[c_out], b),
            c_in,
            c_out,
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> NormIds {
        NormIds {
            scale: self.store.add(format!("{name}.scale"), &[c], vec![T::one(); c]),
            shift: self.store.add(format!("{name}.shift"), &[c], vec![T::zero(); c]),
        }
    }

    fn scalar(&mut self, name: String, v: f64) -> ParamId {
        self.store.add(name, &[], vec![T::of(v)])
    }
}

/// The four `±re, ±im` routing taps used by the identity-initialized blocks.
const ROUTES: [(usize, f64); 4] = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)];

impl<T: Scalar> UnfoldingModel<T> {
    /// Randomly initialized network. Imaging blocks start near the identity,
    /// the last decoder layer starts at zero, and the step sizes and
    /// threshold start at the configured values.
    pub fn new(arch: IfnetArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let geoms = Geoms::new(arch.rows, arch.cols)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2] = ENCODER_CHANNELS;
        let mut stages = Vec::with_capacity(arch.n_stages);
        {
            let mut b = Builder {
                store: &mut store,
                rng: &mut rng,
            };
            for k in 0..arch.n_stages {
                let p = format!("stage{k}");
                let mu = b.scalar(format!("{p}.mu"), inverse_softplus(arch.init_mu));
                let rho = b.scalar(format!("{p}.rho"), inverse_softplus(arch.init_rho));
                let lambda = b.scalar(format!("{p}.lambda"), inverse_softplus(arch.init_lambda));
                let b1a = b.conv(&format!("{p}.img.b1.conv1"), 2, IMAGING_HIDDEN, KERNEL, false);
                let b1b = b.conv(&format!("{p}.img.b1.conv2"), IMAGING_HIDDEN, 2, KERNEL, false);
                let b2a = b.conv(&format!("{p}.img.b2.conv1"), 2, IMAGING_HIDDEN, KERNEL, false);
                let b2b = b.conv(&format!("{p}.img.b2.conv2"), IMAGING_HIDDEN, 2, KERNEL, false);
                let e1 = b.conv(&format!("{p}.foc.enc1"), 2, c1, ENCODER_KERNEL, false);
                let n1 = b.norm(&format!("{p}.foc.norm1"), c1);
                let e2 = b.conv(&format!("{p}.foc.enc2"), c1, c2, KERNEL, false);
                let n2 = b.norm(&format!("{p}.foc.norm2"), c2);
                let res = (0..arch.n_resblocks)
                    .map(|r| ResIds {
                        a: b.conv(&format!("{p}.foc.res{r}.conv1"), c2, c2, KERNEL, false),
                        b: b.conv(&format!("{p}.foc.res{r}.conv2"), c2, c2, KERNEL, false),
                    })
                    .collect();
                let d1 = b.conv(&format!("{p}.foc.dec1"), c2, c1, KERNEL, true);
                let n3 = b.norm(&format!("{p}.foc.norm3"), c1);
                let d2 = b.conv(&format!("{p}.foc.dec2"), c1, 2, KERNEL, true);
                stages.push(StageIds {
                    mu,
                    rho,
                    lambda,
                    b1a,
                    b1b,
                    b2a,
                    b2b,
                    e1,
                    n1,
                    e2,
                    n2,
                    res,
                    d1,
                    n3,
                    d2,
                });
            }
        }
        let ops = OperatorPair::new(&build_phase_term(&arch.aperture(), arch.k_r(), arch.depth)?);
        let mut model = Self {
            arch,
            params: store,
            stages,
            ops,
            geoms,
        };
        for k in 0..model.stages.len() {
            model.init_imaging_blocks(k, 0.01);
            let d2 = model.stages[k].d2;
            model.params.get_mut(d2.w).fill(T::zero());
            model.params.get_mut(d2.b).fill(T::zero());
        }
        Ok(model)
    }

    /// Scales the random imaging-block weights by `noise` and adds the
    /// identity routing `x = relu(x) − relu(−x)` through the hidden channels.
    fn init_imaging_blocks(&mut self, k: usize, noise: f64) {
        let st = self.stages[k].clone();
        let center = KERNEL * KERNEL / 2;
        let kk = KERNEL * KERNEL;
        for (first, second) in [(st.b1a, st.b1b), (st.b2a, st.b2b)] {
            for id in [first.w, first.b, second.w, second.b] {
                self.params
                    .get_mut(id)
                    .iter_mut()
                    .for_each(|v| *v = T::of(v.wide() * noise));
            }
            let w1 = self.params.get_mut(first.w);
            for (ch, &(src, sign)) in ROUTES.iter().enumerate() {
                let i = (ch * 2 + src) * kk + center;
                w1[i] = w1[i] + T::of(sign);
            }
            let w2 = self.params.get_mut(second.w);
            for (ch, &(dst, sign)) in ROUTES.iter().enumerate() {
                let i = (dst * IMAGING_HIDDEN + ch) * kk + center;
                w2[i] = w2[i] + T::of(sign);
            }
        }
    }

    /// Sets every stage to the exact classical configuration: identity
    /// imaging blocks, a vanishing threshold, and a zero decoder output so the
    /// focusing prior reduces to the unit-modulus projection.
    pub fn configure_identity(&mut self) {
        for k in 0..self.stages.len() {
            self.init_imaging_blocks(k, 0.0);
            let st = &self.stages[k];
            let (lam, d2) = (st.lambda, st.d2);
            self.params.get_mut(lam)[0] = T::of(IDENTITY_THRESHOLD_RAW);
            self.params.get_mut(d2.w).fill(T::zero());
            self.params.get_mut(d2.b).fill(T::zero());
        }
    }

    /// Sets the raw (pre-softplus) step sizes of stage `k`.
    pub fn set_stage_steps(&mut self, k: usize, mu: f64, rho: f64) {
        let st = &self.stages[k];
        let (m, r) = (st.mu, st.rho);
        self.params.get_mut(m)[0] = T::of(inverse_softplus(mu));
        self.params.get_mut(r)[0] = T::of(inverse_softplus(rho));
    }

    /// Positive `(μ, ρ, λ)` of stage `k`.
    pub fn stage_scalars(&self, k: usize) -> (f64, f64, f64) {
        let st = &self.stages[k];
        (
            softplus(self.params.scalar(st.mu)),
            softplus(self.params.scalar(st.rho)),
            softplus(self.params.scalar(st.lambda)),
        )
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Same architecture and values at another precision.
    pub fn cast<U: Scalar>(&self) -> UnfoldingModel<U> {
        let mut store = ParamStore::new();
        for spec in self.params.specs() {
            let vals = self.params.values()[spec.offset..spec.offset + spec.len]
                .iter()
                .map(|v| U::of(v.wide()))
                .collect();
            store.add(spec.name.clone(), &spec.shape, vals);
        }
        UnfoldingModel {
            arch: self.arch.clone(),
            params: store,
            stages: self.stages.clone(),
            ops: OperatorPair::new(
                &build_phase_term(&self.arch.aperture(), self.arch.k_r(), self.arch.depth)
                    .expect("architecture was validated"),
            ),
            geoms: self.geoms,
        }
    }

    pub fn operators(&self) -> &OperatorPair<T> {
        &self.ops
    }

    fn check_len(&self, z: &[C<T>]) -> Result<()> {
        if z.len() != self.arch.plane() {
            return Err(NnError::Shape(format!(
                "model expects {}x{} = {} cells, got {}",
                self.arch.rows,
                self.arch.cols,
                self.arch.plane(),
                z.len()
            )));
        }
        Ok(())
    }

    /// `[0, 1]`-normalized image to the working frame of the stages.
    pub fn to_working(&self, z: &[C<T>]) -> Vec<C<T>> {
        if !self.arch.recenter {
            return z.to_vec();
        }
        let two = T::of(2.0);
        z.iter()
            .map(|v| C::new(two * v.re - T::one(), two * v.im - T::one()))
            .collect()
    }

    pub fn from_working(&self, z: &[C<T>]) -> Vec<C<T>> {
        if !self.arch.recenter {
            return z.to_vec();
        }
        let half = T::of(0.5);
        z.iter()
            .map(|v| C::new((v.re + T::one()) * half, (v.im + T::one()) * half))
            .collect()
    }

    /// One imaging module: gradient step then `B₂(soft(B₁(R)))`.
    pub fn imaging_stage(&self, k: usize, sigma: &[C<T>], phi: &[C<T>], s_eps: &[C<T>]) -> Result<Vec<C<T>>> {
        self.check_len(sigma)?;
        Ok(self.imaging_forward(k, sigma, phi, s_eps, None))
    }

    /// One focusing module: gradient step, prior, projection.
    pub fn focusing_stage(&self, k: usize, phi: &[C<T>], sigma: &[C<T>], s_eps: &[C<T>]) -> Result<Vec<C<T>>> {
        self.check_len(phi)?;
        Ok(self.focusing_forward(k, phi, sigma, s_eps, None))
    }

    /// Runs all stages on a `[0, 1]`-normalized distorted image and returns
    /// `(Σ_K, Φ_K)` with `Σ_K` in the same frame as the input.
    pub fn forward_pass(&self, input: &[C<T>]) -> Result<(Vec<C<T>>, Vec<C<T>>)> {
        self.check_len(input)?;
        let (sig, phi) = self.run_working(&self.to_working(input), None);
        Ok((self.from_working(&sig), phi))
    }

    /// [`forward_pass`](Self::forward_pass) on a 64-bit grid.
    pub fn forward_grid(&self, input: &ComplexGrid) -> Result<(ComplexGrid, ComplexGrid)> {
        let z = grid_to_vec(input);
        let (s, p) = self.forward_pass(&z)?;
        Ok((vec_to_grid(&s, input.rows(), input.cols()), vec_to_grid(&p, input.rows(), input.cols())))
    }

    fn run_working(&self, x: &[C<T>], mut caches: Option<&mut Vec<StageCache<T>>>) -> (Vec<C<T>>, Vec<C<T>>) {
        let s_eps = self.ops.generate.apply(x);
        let mut sig = x.to_vec();
        let mut phi = vec![C::new(T::one(), T::zero()); x.len()];
        for k in 0..self.stages.len() {
            let mut cache = caches.as_ref().map(|_| StageCache::default());
            let next_sig = self.imaging_forward(k, &sig, &phi, &s_eps, cache.as_mut());
            let next_phi = self.focusing_forward(k, &phi, &next_sig, &s_eps, cache.as_mut());
            if let (Some(list), Some(c)) = (caches.as_mut(), cache) {
                list.push(c);
            }
            sig = next_sig;
            phi = next_phi;
        }
        (sig, phi)
    }

    fn conv_fwd(&self, x: &[T], g: &ConvGeom, ids: ConvIds) -> Vec<T> {
        conv2d_sample(x, g, self.params.get(ids.w), self.params.get(ids.b), ids.c_out)
    }

    fn tconv_fwd(&self, x: &[T], g: &ConvGeom, ids: ConvIds) -> Vec<T> {
        tconv2d_sample(x, g, self.params.get(ids.w), self.params.get(ids.b), ids.c_in)
    }

    fn norm_fwd(&self, x: &[T], ids: NormIds) -> (Vec<T>, NormCache<T>) {
        let c = ids.scale.len;
        instance_norm_sample(x, c, self.params.get(ids.scale), self.params.get(ids.shift))
    }

    fn imaging_forward(
        &self,
        k: usize,
        sig: &[C<T>],
        phi: &[C<T>],
        s_eps: &[C<T>],
        cache: Option<&mut StageCache<T>>,
    ) -> Vec<C<T>> {
        let st = &self.stages[k];
        let g = &self.geoms;
        let mu = T::of(softplus(self.params.scalar(st.mu)));
        let t = T::of(softplus(self.params.scalar(st.lambda)));

        let gen = self.ops.generate.apply(sig);
        let resid: Vec<C<T>> = gen
            .iter()
            .zip(phi.iter().zip(s_eps))
            .map(|(g, (p, s))| g - p * s)
            .collect();
        let back = self.ops.image.apply(&resid);
        let r: Vec<C<T>> = sig.iter().zip(&back).map(|(s, b)| s - b * mu).collect();

        let x0 = to_planar(&r);
        let mut a1 = self.conv_fwd(&x0, &g.img2, st.b1a);
        relu_in_place(&mut a1);
        let h2 = self.conv_fwd(&a1, &g.img8, st.b1b);
        let shrunk: Vec<T> = h2.iter().map(|&v| shrink_real(v, t)).collect();
        let mut a3 = self.conv_fwd(&shrunk, &g.img2, st.b2a);
        relu_in_place(&mut a3);
        let h4 = self.conv_fwd(&a3, &g.img8, st.b2b);
        let out = from_planar(&h4);
        if let Some(c) = cache {
            c.back = back;
            c.x0 = x0;
            c.a1 = a1;
            c.h2 = h2;
            c.shrunk = shrunk;
            c.a3 = a3;
        }
        out
    }

    fn focusing_forward(
        &self,
        k: usize,
        phi: &[C<T>],
        sig: &[C<T>],
        s_eps: &[C<T>],
        cache: Option<&mut StageCache<T>>,
    ) -> Vec<C<T>> {
        let st = &self.stages[k];
        let g = &self.geoms;
        let rho = T::of(softplus(self.params.scalar(st.rho)));

        let gen = self.ops.generate.apply(sig);
        let v: Vec<C<T>> = phi
            .iter()
            .zip(s_eps.iter().zip(&gen))
            .map(|(p, (s, g))| p - s.conj() * (p * s - g) * rho)
            .collect();
        let v2 = to_planar(&v);

        let e1 = self.conv_fwd(&v2, &g.enc1, st.e1);
        let (mut r1, n1) = self.norm_fwd(&e1, st.n1);
        relu_in_place(&mut r1);
        let e2 = self.conv_fwd(&r1, &g.enc2, st.e2);
        let (mut r2, n2) = self.norm_fwd(&e2, st.n2);
        relu_in_place(&mut r2);

        let mut x = r2.clone();
        let mut res_cache = Vec::with_capacity(st.res.len());
        for blk in &st.res {
            let mut ra = self.conv_fwd(&x, &g.res, blk.a);
            relu_in_place(&mut ra);
            let cb = self.conv_fwd(&ra, &g.res, blk.b);
            let next: Vec<T> = x.iter().zip(&cb).map(|(a, b)| *a + *b).collect();
            res_cache.push(ResCache { input: x, ra });
            x = next;
        }
        let d1 = self.tconv_fwd(&x, &g.dec1, st.d1);
        let (mut r3, n3) = self.norm_fwd(&d1, st.n3);
        relu_in_place(&mut r3);
        let d2 = self.tconv_fwd(&r3, &g.dec2, st.d2);
        let o: Vec<T> = d2.iter().zip(&v2).map(|(a, b)| *a + *b).collect();
        let oc = from_planar(&o);
        let out = oc.iter().map(|&z| project_one(z)).collect();
        if let Some(c) = cache {
            c.gen_sig = gen;
            c.v2 = v2;
            c.r1 = r1;
            c.n1 = Some(n1);
            c.r2 = r2;
            c.n2 = Some(n2);
            c.res = res_cache;
            c.res_out = x;
            c.r3 = r3;
            c.n3 = Some(n3);
            c.pre_projection = oc;
        }
        out
    }

    /// Amplitude MSE of one sample and its gradient with respect to every
    /// parameter (same layout as `params.values()`), scaled by `weight`.
    /// `input` and `target` are `[0, 1]`-normalized.
    pub fn loss_and_grad(&self, input: &[C<T>], target: &[C<T>], weight: f64) -> Result<(f64, Vec<T>)> {
        self.check_len(input)?;
        self.check_len(target)?;
        let x = self.to_working(input);
        let y = self.to_working(target);
        let s_eps = self.ops.generate.apply(&x);
        let mut caches = Vec::with_capacity(self.stages.len());
        let mut sigs = vec![x.clone()];
        let mut phis = vec![vec![C::new(T::one(), T::zero()); x.len()]];
        for k in 0..self.stages.len() {
            let mut c = StageCache::default();
            let ns = self.imaging_forward(k, sigs.last().unwrap(), phis.last().unwrap(), &s_eps, Some(&mut c));
            let np = self.focusing_forward(k, phis.last().unwrap(), &ns, &s_eps, Some(&mut c));
            caches.push(c);
            sigs.push(ns);
            phis.push(np);
        }
        let out = sigs.last().unwrap();
        let loss = crate::complex::amplitude_mse_slice(out, &y);
        let mut grads = vec![T::zero(); self.params.len()];
        let mut g_sig = crate::complex::amplitude_mse_grad_slice(out, &y, weight);
        let mut g_phi = vec![C::new(T::zero(), T::zero()); x.len()];
        for k in (0..self.stages.len()).rev() {
            let c = &caches[k];
            let (gs, gp) = self.stage_backward(k, c, &phis[k], &s_eps, &g_sig, &g_phi, &mut grads);
            g_sig = gs;
            g_phi = gp;
        }
        Ok((loss * weight, grads))
    }

    #[allow(clippy::too_many_arguments)]
    fn stage_backward(
        &self,
        k: usize,
        c: &StageCache<T>,
        phi_in: &[C<T>],
        s_eps: &[C<T>],
        g_sig_out: &[C<T>],
        g_phi_out: &[C<T>],
        grads: &mut [T],
    ) -> (Vec<C<T>>, Vec<C<T>>) {
        let st = &self.stages[k];
        let g = &self.geoms;
        let p = &self.params;

        // focusing module
        let g_oc: Vec<C<T>> = c
            .pre_projection
            .iter()
            .zip(g_phi_out)
            .map(|(&z, &gz)| project_one_backward(z, gz))
            .collect();
        let g_o = to_planar(&g_oc);
        let mut g_v2 = g_o.clone();

        let mut g_r3 = self.tconv_bwd(&c.r3, &g.dec2, st.d2, &g_o, grads);
        relu_backward_in_place(&c.r3, &mut g_r3);
        let g_d1 = self.norm_bwd(c.n3.as_ref().unwrap(), st.n3, &g_r3, grads);
        let mut g_x = self.tconv_bwd(&c.res_out, &g.dec1, st.d1, &g_d1, grads);
        for (blk, rc) in st.res.iter().zip(&c.res).rev() {
            let mut g_ra = self.conv_bwd(&rc.ra, &g.res, blk.b, &g_x, grads, true).unwrap();
            relu_backward_in_place(&rc.ra, &mut g_ra);
            let g_in = self.conv_bwd(&rc.input, &g.res, blk.a, &g_ra, grads, true).unwrap();
            g_x.iter_mut().zip(&g_in).for_each(|(a, b)| *a = *a + *b);
        }
        relu_backward_in_place(&c.r2, &mut g_x);
        let g_e2 = self.norm_bwd(c.n2.as_ref().unwrap(), st.n2, &g_x, grads);
        let mut g_r1 = self.conv_bwd(&c.r1, &g.enc2, st.e2, &g_e2, grads, true).unwrap();
        relu_backward_in_place(&c.r1, &mut g_r1);
        let g_e1 = self.norm_bwd(c.n1.as_ref().unwrap(), st.n1, &g_r1, grads);
        let g_v_enc = self.conv_bwd(&c.v2, &g.enc1, st.e1, &g_e1, grads, true).unwrap();
        g_v2.iter_mut().zip(&g_v_enc).for_each(|(a, b)| *a = *a + *b);
        let g_v = from_planar(&g_v2);

        let rho_raw = p.scalar(st.rho);
        let rho = T::of(softplus(rho_raw));
        let mut g_phi: Vec<C<T>> = Vec::with_capacity(g_v.len());
        let mut g_gen: Vec<C<T>> = Vec::with_capacity(g_v.len());
        let mut d_rho = 0.0;
        for i in 0..g_v.len() {
            let (gv, s, ph, gs) = (g_v[i], s_eps[i], phi_in[i], c.gen_sig[i]);
            g_phi.push(gv * (T::one() - rho * s.norm_sqr()));
            g_gen.push(s * gv * rho);
            let dv_drho = -(s.conj() * (ph * s - gs));
            d_rho += (gv.conj() * dv_drho).re.wide();
        }
        add_scalar(grads, st.rho, d_rho * sigmoid(rho_raw));
        let back_gen = self.ops.image.apply(&g_gen);
        let g_sig_mid: Vec<C<T>> = g_sig_out.iter().zip(&back_gen).map(|(a, b)| a + b).collect();

        // imaging module
        let g_h4 = to_planar(&g_sig_mid);
        let mut g_a3 = self.conv_bwd(&c.a3, &g.img8, st.b2b, &g_h4, grads, true).unwrap();
        relu_backward_in_place(&c.a3, &mut g_a3);
        let mut g_h2 = self.conv_bwd(&c.shrunk, &g.img2, st.b2a, &g_a3, grads, true).unwrap();
        let lam_raw = p.scalar(st.lambda);
        let t = T::of(softplus(lam_raw));
        let d_t = soft_threshold_backward_in_place(&c.h2, t, &mut g_h2);
        add_scalar(grads, st.lambda, d_t * sigmoid(lam_raw));
        let mut g_a1 = self.conv_bwd(&c.a1, &g.img8, st.b1b, &g_h2, grads, true).unwrap();
        relu_backward_in_place(&c.a1, &mut g_a1);
        let g_x0 = self.conv_bwd(&c.x0, &g.img2, st.b1a, &g_a1, grads, true).unwrap();
        let g_r = from_planar(&g_x0);

        let mu_raw = p.scalar(st.mu);
        let mu = T::of(softplus(mu_raw));
        let d_mu: f64 = g_r
            .iter()
            .zip(&c.back)
            .map(|(gr, b)| -(gr.conj() * b).re.wide())
            .sum();
        add_scalar(grads, st.mu, d_mu * sigmoid(mu_raw));
        let g_gen_r = self.ops.generate.apply(&g_r);
        let ig = self.ops.image.apply(&g_gen_r);
        let g_sig_in: Vec<C<T>> = g_r.iter().zip(&ig).map(|(a, b)| a - b * mu).collect();
        for i in 0..g_phi.len() {
            g_phi[i] = g_phi[i] + s_eps[i].conj() * g_gen_r[i] * mu;
        }
        (g_sig_in, g_phi)
    }

    fn conv_bwd(&self, x: &[T], g: &ConvGeom, ids: ConvIds, gout: &[T], grads: &mut [T], need_dx: bool) -> Option<Vec<T>> {
        let (dw, db) = split_two(grads, ids.w, ids.b);
        conv2d_sample_backward(x, g, self.params.get(ids.w), ids.c_out, gout, dw, db, need_dx)
    }

    fn tconv_bwd(&self, x: &[T], g: &ConvGeom, ids: ConvIds, gout: &[T], grads: &mut [T]) -> Vec<T> {
        let (dw, db) = split_two(grads, ids.w, ids.b);
        tconv2d_sample_backward(x, g, self.params.get(ids.w), ids.c_in, gout, dw, db, true).unwrap()
    }

    fn norm_bwd(&self, cache: &NormCache<T>, ids: NormIds, gout: &[T], grads: &mut [T]) -> Vec<T> {
        let (ds, dh) = split_two(grads, ids.scale, ids.shift);
        instance_norm_sample_backward(cache, ids.scale.len, self.params.get(ids.scale), gout, ds, dh)
    }
}

fn add_scalar<T: Scalar>(grads: &mut [T], id: ParamId, v: f64) {
    grads[id.offset] = grads[id.offset] + T::of(v);
}

/// Disjoint mutable views of two parameter ranges (`a` must precede `b`).
fn split_two<T>(grads: &mut [T], a: ParamId, b: ParamId) -> (&mut [T], &mut [T]) {
    assert!(a.offset + a.len <= b.offset, "parameter ranges out of order");
    let (left, right) = grads.split_at_mut(b.offset);
    (&mut left[a.range()], &mut right[..b.len])
}

#[derive(Clone, Debug, Default)]
struct ResCache<T> {
    input: Vec<T>,
    ra: Vec<T>,
}

/// Activations of one stage kept for the backward pass. ReLU masks are
/// recovered from the post-activation values.
#[derive(Clone, Debug, Default)]
struct StageCache<T> {
    back: Vec<C<T>>,
    x0: Vec<T>,
    a1: Vec<T>,
    h2: Vec<T>,
    shrunk: Vec<T>,
    a3: Vec<T>,
    gen_sig: Vec<C<T>>,
    v2: Vec<T>,
    r1: Vec<T>,
    n1: Option<NormCache<T>>,
    r2: Vec<T>,
    n2: Option<NormCache<T>>,
    res: Vec<ResCache<T>>,
    res_out: Vec<T>,
    r3: Vec<T>,
    n3: Option<NormCache<T>>,
    pre_projection: Vec<C<T>>,
}

pub fn grid_to_vec<T: Scalar>(g: &ComplexGrid) -> Vec<C<T>> {
    g.as_slice()
        .iter()
        .map(|v| C::new(T::of(v.re), T::of(v.im)))
        .collect()
}

pub fn vec_to_grid<T: Scalar>(z: &[C<T>], rows: usize, cols: usize) -> ComplexGrid {
    ComplexGrid::new(
        rows,
        cols,
        z.iter().map(|v| Complex64::new(v.re.wide(), v.im.wide())).collect(),
    )
    .expect("length matches the grid")
}
