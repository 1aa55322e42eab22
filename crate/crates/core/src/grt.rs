//! Discretized Generalized Radon Transform.
//!
//! For one viewpoint the forward operator maps a voxel grid to the signal
//! tensor
//!
//! ```text
//! S[f, m, n] = sum_x w(x) exp(j k_f R_b(x; tx_m, rx_n)) rho(x) g^3
//! ```
//!
//! with `w = 1 / R_b^2` in the near field and `w = 1` in the far field. The
//! frequency grid is uniform, so `exp(j k_f R) = exp(j k_0 R) * exp(j dk R)^f`
//! and each (pair, voxel) needs two phasors instead of `n_freq` of them. The
//! forward pass advances the phasor by repeated multiplication and the adjoint
//! evaluates the same polynomial by Horner's rule in the conjugate phasor.
//!
//! Summation over voxels uses eight interleaved partial sums combined in a
//! fixed order, so results are bit-reproducible and do not depend on how
//! viewpoints are spread across threads.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    antenna_array, norm, sub, wavenumber, FieldRegime, RadarConfig, Vec3, Viewpoint,
    SPEED_OF_LIGHT,
};
use crate::scene::{voxel_centers, GridSpec, VoxelGrid};

const LANES: usize = 8;

/// Distance below which a voxel is considered to sit on an antenna.
const MIN_ANTENNA_DISTANCE: f64 = 1e-9;

/// One viewpoint's measurement, laid out `[freq][tx][rx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalTensor {
    pub n_freq: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    pub values: Vec<Complex64>,
}

impl SignalTensor {
    pub fn zeros(config: &RadarConfig) -> Self {
        Self {
            n_freq: config.n_freq,
            n_tx: config.n_tx,
            n_rx: config.n_rx,
            values: vec![Complex64::new(0.0, 0.0); config.signal_len()],
        }
    }

    pub fn from_values(config: &RadarConfig, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != config.signal_len() {
            return Err(Error::Shape(format!(
                "signal needs {} values, got {}",
                config.signal_len(),
                values.len()
            )));
        }
        Ok(Self {
            n_freq: config.n_freq,
            n_tx: config.n_tx,
            n_rx: config.n_rx,
            values,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n_freq, self.n_tx, self.n_rx]
    }

    pub fn get(&self, f: usize, m: usize, n: usize) -> Complex64 {
        self.values[(f * self.n_tx + m) * self.n_rx + n]
    }

    pub fn max_magnitude(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, other: &SignalTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "signal shapes differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

/// Phasors of a single TX/RX pair over every voxel, structure-of-arrays.
#[derive(Clone, Debug, Default)]
struct PairPhasors {
    base_re: Vec<f64>,
    base_im: Vec<f64>,
    step_re: Vec<f64>,
    step_im: Vec<f64>,
}

struct Kernel {
    k0: f64,
    dk: f64,
    weight_volume: f64,
    regime: FieldRegime,
}

impl Kernel {
    fn new(config: &RadarConfig, spec: &GridSpec) -> Result<Self> {
        config.validate()?;
        let dk = if config.n_freq > 1 {
            TAU * (config.f_hi - config.f_lo) / (config.n_freq - 1) as f64 / SPEED_OF_LIGHT
        } else {
            0.0
        };
        Ok(Self {
            k0: wavenumber(config.f_lo)?,
            dk,
            weight_volume: spec.voxel_volume(),
            regime: config.field_regime,
        })
    }

    fn fill(&self, centers: &[Vec3], tx: Vec3, rx: Vec3, out: &mut PairPhasors) -> Result<()> {
        let nv = centers.len();
        for buf in [&mut out.base_re, &mut out.base_im, &mut out.step_re, &mut out.step_im] {
            buf.clear();
            buf.reserve(nv);
        }
        for &x in centers {
            let (dt, dr) = (norm(sub(x, tx)), norm(sub(x, rx)));
            let r = dt + dr;
            let amp = match self.regime {
                FieldRegime::NearField => {
                    if dt < MIN_ANTENNA_DISTANCE || dr < MIN_ANTENNA_DISTANCE {
                        return Err(Error::Geometry(format!(
                            "voxel at {x:?} coincides with an antenna (near-field weight is singular)"
                        )));
                    }
                    self.weight_volume / (r * r)
                }
                FieldRegime::FarField => self.weight_volume,
            };
            let (s, c) = (self.k0 * r).sin_cos();
            out.base_re.push(amp * c);
            out.base_im.push(amp * s);
            let (s, c) = (self.dk * r).sin_cos();
            out.step_re.push(c);
            out.step_im.push(s);
        }
        Ok(())
    }
}

/// `sum_x a_x` for every frequency while advancing `a_x *= step_x`.
fn forward_pair(
    ph: &PairPhasors,
    rho_re: &[f64],
    rho_im: &[f64],
    n_freq: usize,
    ar: &mut [f64],
    ai: &mut [f64],
    mut emit: impl FnMut(usize, Complex64),
) {
    let nv = rho_re.len();
    for x in 0..nv {
        let (br, bi) = (ph.base_re[x], ph.base_im[x]);
        ar[x] = br * rho_re[x] - bi * rho_im[x];
        ai[x] = br * rho_im[x] + bi * rho_re[x];
    }
    let (sr, si) = (&ph.step_re[..nv], &ph.step_im[..nv]);
    let body = nv - nv % LANES;
    for f in 0..n_freq {
        let advance = f + 1 < n_freq;
        let mut acc_r = [0.0f64; LANES];
        let mut acc_i = [0.0f64; LANES];
        for base in (0..body).step_by(LANES) {
            for l in 0..LANES {
                let x = base + l;
                let (a, b) = (ar[x], ai[x]);
                acc_r[l] += a;
                acc_i[l] += b;
                if advance {
                    ar[x] = a * sr[x] - b * si[x];
                    ai[x] = a * si[x] + b * sr[x];
                }
            }
        }
        for x in body..nv {
            let (a, b) = (ar[x], ai[x]);
            acc_r[x - body] += a;
            acc_i[x - body] += b;
            if advance {
                ar[x] = a * sr[x] - b * si[x];
                ai[x] = a * si[x] + b * sr[x];
            }
        }
        emit(f, Complex64::new(reduce_lanes(&acc_r), reduce_lanes(&acc_i)));
    }
}

#[inline]
fn reduce_lanes(v: &[f64; LANES]) -> f64 {
    ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]))
}

/// `out_x += conj(base_x) * sum_f conj(step_x)^f sig[f]`.
fn adjoint_pair(
    ph: &PairPhasors,
    sig: impl Fn(usize) -> Complex64,
    n_freq: usize,
    hr: &mut [f64],
    hi: &mut [f64],
    out_re: &mut [f64],
    out_im: &mut [f64],
) {
    let nv = out_re.len();
    let last = sig(n_freq - 1);
    hr[..nv].fill(last.re);
    hi[..nv].fill(last.im);
    let (sr, si) = (&ph.step_re[..nv], &ph.step_im[..nv]);
    for f in (0..n_freq - 1).rev() {
        let d = sig(f);
        for x in 0..nv {
            let (a, b) = (hr[x], hi[x]);
            hr[x] = a * sr[x] + b * si[x] + d.re;
            hi[x] = b * sr[x] - a * si[x] + d.im;
        }
    }
    let (br, bi) = (&ph.base_re[..nv], &ph.base_im[..nv]);
    for x in 0..nv {
        out_re[x] += br[x] * hr[x] + bi[x] * hi[x];
        out_im[x] += br[x] * hi[x] - bi[x] * hr[x];
    }
}

fn split_complex(values: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    values.iter().map(|v| (v.re, v.im)).unzip()
}

/// Cached forward/adjoint operator of one viewpoint on one grid.
///
/// Holds `4 * n_tx * n_rx * n_voxels` doubles.
#[derive(Clone, Debug)]
pub struct ViewOperator {
    spec: GridSpec,
    config: RadarConfig,
    pairs: Vec<PairPhasors>,
}

impl ViewOperator {
    pub fn new(vp: &Viewpoint, config: &RadarConfig, spec: &GridSpec) -> Result<Self> {
        let centers = voxel_centers(spec);
        Self::with_centers(vp, config, spec, &centers)
    }

    fn with_centers(
        vp: &Viewpoint,
        config: &RadarConfig,
        spec: &GridSpec,
        centers: &[Vec3],
    ) -> Result<Self> {
        let kernel = Kernel::new(config, spec)?;
        let arr = antenna_array(vp, config);
        let mut pairs = Vec::with_capacity(config.n_pairs());
        for &tx in &arr.tx {
            for &rx in &arr.rx {
                let mut ph = PairPhasors::default();
                kernel.fill(centers, tx, rx, &mut ph)?;
                pairs.push(ph);
            }
        }
        Ok(Self {
            spec: *spec,
            config: *config,
            pairs,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn config(&self) -> &RadarConfig {
        &self.config
    }

    pub fn apply(&self, values: &[Complex64]) -> Result<SignalTensor> {
        if values.len() != self.spec.len() {
            return Err(Error::Shape(format!(
                "operator expects {} voxels, got {}",
                self.spec.len(),
                values.len()
            )));
        }
        let (rr, ri) = split_complex(values);
        let nv = values.len();
        let (mut ar, mut ai) = (vec![0.0; nv], vec![0.0; nv]);
        let mut out = SignalTensor::zeros(&self.config);
        let np = self.pairs.len();
        for (p, ph) in self.pairs.iter().enumerate() {
            forward_pair(ph, &rr, &ri, self.config.n_freq, &mut ar, &mut ai, |f, v| {
                out.values[f * np + p] = v;
            });
        }
        Ok(out)
    }

    pub fn apply_adjoint(&self, sig: &SignalTensor) -> Result<Vec<Complex64>> {
        if sig.values.len() != self.config.signal_len() {
            return Err(Error::Shape(format!(
                "adjoint expects {} samples, got {}",
                self.config.signal_len(),
                sig.values.len()
            )));
        }
        let nv = self.spec.len();
        let (mut hr, mut hi) = (vec![0.0; nv], vec![0.0; nv]);
        let (mut or, mut oi) = (vec![0.0; nv], vec![0.0; nv]);
        let np = self.pairs.len();
        for (p, ph) in self.pairs.iter().enumerate() {
            adjoint_pair(
                ph,
                |f| sig.values[f * np + p],
                self.config.n_freq,
                &mut hr,
                &mut hi,
                &mut or,
                &mut oi,
            );
        }
        Ok(or.into_iter().zip(oi).map(|(a, b)| Complex64::new(a, b)).collect())
    }
}

/// Forward model for one viewpoint. Phasors are generated pair by pair, so
/// memory stays at a few voxel-sized buffers even on large grids.
pub fn forward(grid: &VoxelGrid, vp: &Viewpoint, config: &RadarConfig) -> Result<SignalTensor> {
    let centers = voxel_centers(&grid.spec);
    forward_with_centers(grid, vp, config, &centers)
}

fn forward_with_centers(
    grid: &VoxelGrid,
    vp: &Viewpoint,
    config: &RadarConfig,
    centers: &[Vec3],
) -> Result<SignalTensor> {
    let kernel = Kernel::new(config, &grid.spec)?;
    let arr = antenna_array(vp, config);
    let (rr, ri) = split_complex(&grid.values);
    let nv = rr.len();
    let (mut ar, mut ai) = (vec![0.0; nv], vec![0.0; nv]);
    let mut ph = PairPhasors::default();
    let mut out = SignalTensor::zeros(config);
    let np = config.n_pairs();
    for (m, &tx) in arr.tx.iter().enumerate() {
        for (n, &rx) in arr.rx.iter().enumerate() {
            let p = m * config.n_rx + n;
            kernel.fill(centers, tx, rx, &mut ph)?;
            forward_pair(&ph, &rr, &ri, config.n_freq, &mut ar, &mut ai, |f, v| {
                out.values[f * np + p] = v;
            });
        }
    }
    Ok(out)
}

/// Conjugate transpose of [`forward`] for one viewpoint.
pub fn adjoint(
    sig: &SignalTensor,
    vp: &Viewpoint,
    config: &RadarConfig,
    spec: &GridSpec,
) -> Result<VoxelGrid> {
    adjoint_with_centers(sig, vp, config, spec, &voxel_centers(spec))
}

fn adjoint_with_centers(
    sig: &SignalTensor,
    vp: &Viewpoint,
    config: &RadarConfig,
    spec: &GridSpec,
    centers: &[Vec3],
) -> Result<VoxelGrid> {
    if sig.shape() != [config.n_freq, config.n_tx, config.n_rx] || sig.values.len() != config.signal_len() {
        return Err(Error::Shape(format!(
            "signal shape {:?} does not match radar config",
            sig.shape()
        )));
    }
    let kernel = Kernel::new(config, spec)?;
    let arr = antenna_array(vp, config);
    let nv = spec.len();
    let (mut hr, mut hi) = (vec![0.0; nv], vec![0.0; nv]);
    let (mut or, mut oi) = (vec![0.0; nv], vec![0.0; nv]);
    let mut ph = PairPhasors::default();
    let np = config.n_pairs();
    for (m, &tx) in arr.tx.iter().enumerate() {
        for (n, &rx) in arr.rx.iter().enumerate() {
            let p = m * config.n_rx + n;
            kernel.fill(centers, tx, rx, &mut ph)?;
            adjoint_pair(
                &ph,
                |f| sig.values[f * np + p],
                config.n_freq,
                &mut hr,
                &mut hi,
                &mut or,
                &mut oi,
            );
        }
    }
    let values = or.into_iter().zip(oi).map(|(a, b)| Complex64::new(a, b)).collect();
    Ok(VoxelGrid { spec: *spec, values })
}

/// Disjoint train/test viewpoint indices into a [`Dataset`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded sampling without replacement: the first `n_train` indices of a
    /// shuffled `0..n` go to training, the next `n_test` to testing.
    pub fn sample(n: usize, n_train: usize, n_test: usize, seed: u64) -> Result<Self> {
        if n_train + n_test > n {
            return Err(Error::Domain(format!(
                "cannot draw {n_train} train + {n_test} test viewpoints from {n}"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        Ok(Self {
            train: idx[..n_train].to_vec(),
            test: idx[n_train..n_train + n_test].to_vec(),
        })
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.test) {
            if i >= n {
                return Err(Error::Domain(format!("split index {i} out of range {n}")));
            }
            if seen[i] {
                return Err(Error::Domain(format!("viewpoint {i} appears twice in split")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

/// Normalized signals for a list of viewpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: RadarConfig,
    pub viewpoints: Vec<Viewpoint>,
    pub signals: Vec<SignalTensor>,
    /// Global divisor applied to every raw signal.
    pub scale: f64,
    pub split: Split,
}

impl Dataset {
    pub fn with_split(mut self, split: Split) -> Result<Self> {
        split.validate(self.viewpoints.len())?;
        self.split = split;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.viewpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.viewpoints.is_empty()
    }
}

/// Runs [`forward`] for every viewpoint and divides all signals by the
/// largest magnitude found anywhere in the set.
pub fn forward_dataset(
    grid: &VoxelGrid,
    vps: &[Viewpoint],
    config: &RadarConfig,
) -> Result<Dataset> {
    if vps.is_empty() {
        return Err(Error::Domain("dataset needs at least one viewpoint".into()));
    }
    let centers = voxel_centers(&grid.spec);
    let mut signals: Vec<SignalTensor> = vps
        .par_iter()
        .map(|vp| forward_with_centers(grid, vp, config, &centers))
        .collect::<Result<_>>()?;
    let scale = signals.iter().map(|s| s.max_magnitude()).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Degenerate(format!(
            "degenerate dataset: maximum signal magnitude is {scale}"
        )));
    }
    for s in &mut signals {
        for v in &mut s.values {
            *v /= scale;
        }
    }
    Ok(Dataset {
        config: *config,
        viewpoints: vps.to_vec(),
        signals,
        scale,
        split: Split::default(),
    })
}

/// Default memory budget for cached per-viewpoint phasors.
pub const DEFAULT_CACHE_BYTES: usize = 4 << 30;

/// Forward/adjoint operators for a subset of a dataset's viewpoints on a
/// reconstruction grid, with the dataset's normalization folded in: `apply`
/// returns `F_v rho / scale`, directly comparable to the stored signals.
///
/// Phasors are cached when they fit in the memory budget and regenerated on
/// every call otherwise; both paths give identical results.
pub struct GrtContext {
    pub spec: GridSpec,
    pub scale: f64,
    /// Dataset indices of the viewpoints, in evaluation order.
    pub indices: Vec<usize>,
    config: RadarConfig,
    viewpoints: Vec<Viewpoint>,
    centers: Vec<Vec3>,
    operators: Option<Vec<ViewOperator>>,
}

impl GrtContext {
    pub fn new(dataset: &Dataset, indices: &[usize], spec: &GridSpec) -> Result<Self> {
        Self::with_cache_limit(dataset, indices, spec, DEFAULT_CACHE_BYTES)
    }

    pub fn with_cache_limit(
        dataset: &Dataset,
        indices: &[usize],
        spec: &GridSpec,
        cache_bytes: usize,
    ) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
            return Err(Error::Domain(format!("viewpoint index {bad} out of range")));
        }
        dataset.config.validate()?;
        let centers = voxel_centers(spec);
        let viewpoints: Vec<Viewpoint> = indices.iter().map(|&i| dataset.viewpoints[i]).collect();
        let need = 32 * dataset.config.n_pairs() * spec.len() * indices.len();
        let operators = if need <= cache_bytes {
            Some(
                viewpoints
                    .par_iter()
                    .map(|vp| ViewOperator::with_centers(vp, &dataset.config, spec, &centers))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Self {
            spec: *spec,
            scale: dataset.scale,
            indices: indices.to_vec(),
            config: dataset.config,
            viewpoints,
            centers,
            operators,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_cached(&self) -> bool {
        self.operators.is_some()
    }

    pub fn config(&self) -> &RadarConfig {
        &self.config
    }

    /// Normalized prediction for the `k`-th viewpoint of the context.
    pub fn apply(&self, k: usize, values: &[Complex64]) -> Result<SignalTensor> {
        let mut s = match &self.operators {
            Some(ops) => ops[k].apply(values)?,
            None => {
                let grid = VoxelGrid::new(self.spec, values.to_vec())?;
                forward_with_centers(&grid, &self.viewpoints[k], &self.config, &self.centers)?
            }
        };
        s.values.iter_mut().for_each(|v| *v /= self.scale);
        Ok(s)
    }

    /// Adjoint of [`GrtContext::apply`].
    pub fn apply_adjoint(&self, k: usize, sig: &SignalTensor) -> Result<Vec<Complex64>> {
        let mut g = match &self.operators {
            Some(ops) => ops[k].apply_adjoint(sig)?,
            None => adjoint_with_centers(sig, &self.viewpoints[k], &self.config, &self.spec, &self.centers)?.values,
        };
        g.iter_mut().for_each(|v| *v /= self.scale);
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::range_bistatic;
    use crate::scene::{generate_primitive, ShapeKind, ShapeSpec};
    use rand::Rng;

    fn random_grid(spec: GridSpec, rng: &mut ChaCha8Rng) -> VoxelGrid {
        let values = (0..spec.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        VoxelGrid::new(spec, values).unwrap()
    }

    fn small_config(regime: FieldRegime) -> RadarConfig {
        RadarConfig {
            n_freq: 4,
            n_tx: 2,
            n_rx: 2,
            field_regime: regime,
            ..Default::default()
        }
    }

    /// Literal evaluation of the defining sum, one exponential per term.
    fn brute_forward(grid: &VoxelGrid, vp: &Viewpoint, cfg: &RadarConfig) -> Vec<Complex64> {
        let freqs = crate::geometry::frequency_grid(cfg).unwrap();
        let arr = antenna_array(vp, cfg);
        let vol = grid.spec.voxel_volume();
        let mut out = Vec::new();
        for &f in &freqs {
            let k = wavenumber(f).unwrap();
            for tx in &arr.tx {
                for rx in &arr.rx {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (i, v) in grid.values.iter().enumerate() {
                        let r = range_bistatic(grid.spec.center(i), *tx, *rx);
                        let w = match cfg.field_regime {
                            FieldRegime::NearField => 1.0 / (r * r),
                            FieldRegime::FarField => 1.0,
                        };
                        acc += Complex64::from_polar(w * vol, k * r) * v;
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    fn rel_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn matches_brute_force_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = GridSpec::with_count(2.0, 4).unwrap();
        let vp = Viewpoint::new(0.7, 1.9).unwrap();
        for regime in [FieldRegime::NearField, FieldRegime::FarField] {
            let cfg = RadarConfig { n_freq: 7, n_tx: 3, n_rx: 2, field_regime: regime, ..Default::default() };
            let g = random_grid(spec, &mut rng);
            let fast = forward(&g, &vp, &cfg).unwrap();
            assert!(rel_diff(&fast.values, &brute_forward(&g, &vp, &cfg)) < 1e-10);
            let cached = ViewOperator::new(&vp, &cfg, &spec).unwrap().apply(&g.values).unwrap();
            assert_eq!(cached, fast);
        }
    }

    #[test]
    fn zero_grid_gives_zero_signal() {
        let spec = GridSpec::with_count(2.0, 3).unwrap();
        let s = forward(&VoxelGrid::zeros(spec), &Viewpoint::new(1.0, 1.0).unwrap(), &small_config(FieldRegime::NearField)).unwrap();
        assert!(s.values.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        let g = adjoint(&s, &Viewpoint::new(1.0, 1.0).unwrap(), &small_config(FieldRegime::NearField), &spec).unwrap();
        assert!(g.values.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn single_voxel_closed_form() {
        // One voxel at the origin, co-located TX/RX on the z-axis 10 m away, k = 1.
        let spec = GridSpec::with_count(0.5, 1).unwrap();
        let grid = VoxelGrid::new(spec, vec![Complex64::new(1.0, 0.0)]).unwrap();
        let kernel = Kernel {
            k0: 1.0,
            dk: 0.0,
            weight_volume: spec.voxel_volume(),
            regime: FieldRegime::FarField,
        };
        let mut ph = PairPhasors::default();
        kernel.fill(&voxel_centers(&spec), [0.0, 0.0, 10.0], [0.0, 0.0, 10.0], &mut ph).unwrap();
        let (mut ar, mut ai) = (vec![0.0], vec![0.0]);
        let mut got = Complex64::new(0.0, 0.0);
        forward_pair(&ph, &[1.0], &[0.0], 1, &mut ar, &mut ai, |_, v| got = v);
        let expect = Complex64::from_polar(0.125, 20.0);
        assert!((got - expect).norm() < 1e-15);
        assert_eq!(forward(&grid, &Viewpoint::new(0.0, 0.0).unwrap(), &RadarConfig::default()).unwrap().values.len(), 25600);
        // Through the public API with a frequency whose wavenumber is 1.
        let cfg = RadarConfig {
            n_freq: 1,
            f_lo: SPEED_OF_LIGHT / TAU,
            f_hi: SPEED_OF_LIGHT / TAU,
            n_tx: 1,
            n_rx: 1,
            antenna_spacing: 1e-3,
            standoff_radius: 10.0,
            field_regime: FieldRegime::FarField,
        };
        let vp = Viewpoint::new(0.0, 0.0).unwrap();
        let s = forward(&VoxelGrid::new(spec, vec![Complex64::new(1.0, 0.0)]).unwrap(), &vp, &cfg).unwrap();
        let arr = antenna_array(&vp, &cfg);
        let r = range_bistatic([0.0; 3], arr.tx[0], arr.rx[0]);
        assert!((s.values[0] - Complex64::from_polar(0.125, r)).norm() < 1e-12);
    }

    #[test]
    fn adjoint_identity_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = GridSpec::with_count(4.0, 8).unwrap();
        for regime in [FieldRegime::NearField, FieldRegime::FarField] {
            let cfg = small_config(regime);
            let vp = Viewpoint::new(rng.random_range(0.0..3.0), rng.random_range(0.0..6.0)).unwrap();
            let rho = random_grid(spec, &mut rng);
            let d = SignalTensor::from_values(
                &cfg,
                (0..cfg.signal_len())
                    .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect(),
            )
            .unwrap();
            let fr = forward(&rho, &vp, &cfg).unwrap();
            let fd = adjoint(&d, &vp, &cfg, &spec).unwrap();
            let lhs: Complex64 = fr.values.iter().zip(&d.values).map(|(a, b)| a * b.conj()).sum();
            let rhs: Complex64 = rho.values.iter().zip(&fd.values).map(|(a, b)| a * b.conj()).sum();
            let nf = fr.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let nd = d.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert!((lhs - rhs).norm() / (nf * nd) < 1e-10);
        }
    }

    #[test]
    fn backprojection_peaks_at_source() {
        let spec = GridSpec::with_count(4.0, 8).unwrap();
        let cfg = RadarConfig { n_freq: 16, n_tx: 4, n_rx: 4, ..Default::default() };
        let mut rho = VoxelGrid::zeros(spec);
        let target = spec.index(2, 5, 3);
        rho.values[target] = Complex64::new(1.0, 0.0);
        let vps = crate::geometry::viewpoint_grid(4, 3, [0.0, 4.5], [0.4, 2.4]).unwrap();
        let mut acc = VoxelGrid::zeros(spec);
        for vp in &vps {
            let psf = adjoint(&forward(&rho, vp, &cfg).unwrap(), vp, &cfg, &spec).unwrap();
            acc.values.iter_mut().zip(&psf.values).for_each(|(a, b)| *a += b);
        }
        assert_eq!(acc.argmax_magnitude(), target);
    }

    #[test]
    fn near_field_singularity_is_an_error() {
        // At the pole the first TX sits at (-1.5 s, 0, r); with s = 2/3 and
        // r = 1 that is the voxel center (-1, 0, 1) of a 3 m grid.
        let cfg = RadarConfig {
            n_freq: 1,
            n_tx: 1,
            n_rx: 1,
            antenna_spacing: 2.0 / 3.0,
            standoff_radius: 1.0,
            ..Default::default()
        };
        let vp = Viewpoint::new(0.0, 0.0).unwrap();
        let tx = antenna_array(&vp, &cfg).tx[0];
        assert!(norm(sub(tx, [-1.0, 0.0, 1.0])) < 1e-12);
        let g = VoxelGrid::zeros(GridSpec::with_count(3.0, 3).unwrap());
        assert!(matches!(forward(&g, &vp, &cfg), Err(Error::Geometry(_))));
        let far = RadarConfig { field_regime: FieldRegime::FarField, ..cfg };
        assert!(forward(&g, &vp, &far).is_ok());
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = GridSpec::with_count(4.0, 5).unwrap();
        let cfg = small_config(FieldRegime::NearField);
        let vp = Viewpoint::new(2.0, 5.0).unwrap();
        let (r1, r2) = (random_grid(spec, &mut rng), random_grid(spec, &mut rng));
        let (a, b) = (Complex64::new(0.3, -1.2), Complex64::new(-2.0, 0.5));
        let mix = VoxelGrid::new(spec, r1.values.iter().zip(&r2.values).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let lhs = forward(&mix, &vp, &cfg).unwrap();
        let (f1, f2) = (forward(&r1, &vp, &cfg).unwrap(), forward(&r2, &vp, &cfg).unwrap());
        let rhs: Vec<Complex64> = f1.values.iter().zip(&f2.values).map(|(x, y)| a * x + b * y).collect();
        assert!(rel_diff(&lhs.values, &rhs) < 1e-12);
    }

    #[test]
    fn far_and_near_field_converge_with_range() {
        let spec = GridSpec::with_count(1.0, 1).unwrap();
        let mut grid = VoxelGrid::zeros(spec);
        grid.values[0] = Complex64::new(1.0, 0.0);
        let vp = Viewpoint::new(0.9, 2.2).unwrap();
        let mut diffs = Vec::new();
        for radius in [10.0, 50.0, 250.0] {
            let norm_signal = |regime| {
                let cfg = RadarConfig { n_freq: 8, n_tx: 4, n_rx: 4, standoff_radius: radius, field_regime: regime, ..Default::default() };
                forward_dataset(&grid, &[vp], &cfg).unwrap().signals.remove(0)
            };
            let nf = norm_signal(FieldRegime::NearField);
            let ff = norm_signal(FieldRegime::FarField);
            diffs.push(rel_diff(&nf.values, &ff.values));
        }
        assert!(diffs[0] > diffs[1] && diffs[1] > diffs[2], "{diffs:?}");
    }

    #[test]
    fn dataset_is_normalized() {
        let spec = GridSpec::new(4.0, 0.5).unwrap();
        let cube = generate_primitive(&ShapeSpec::new(ShapeKind::Cube { edge: 1.0 }, [0.0; 3]), &spec).unwrap();
        let cfg = small_config(FieldRegime::NearField);
        let vps = crate::geometry::viewpoint_grid(3, 2, [0.0, 4.0], [0.5, 2.0]).unwrap();
        let ds = forward_dataset(&cube, &vps, &cfg).unwrap();
        assert_eq!(ds.signals.len(), 6);
        let m = ds.signals.iter().map(|s| s.max_magnitude()).fold(0.0, f64::max);
        assert!((m - 1.0).abs() <= 2.0 * f64::EPSILON);
        for s in &ds.signals {
            assert_eq!(s.shape(), [4, 2, 2]);
        }
        // single viewpoint: forward divided by its own max
        let one = forward_dataset(&cube, &vps[..1], &cfg).unwrap();
        let raw = forward(&cube, &vps[0], &cfg).unwrap();
        let mx = raw.max_magnitude();
        assert_eq!(one.scale, mx);
        for (a, b) in one.signals[0].values.iter().zip(&raw.values) {
            assert_eq!(*a, b / mx);
        }
        assert!(matches!(forward_dataset(&VoxelGrid::zeros(spec), &vps, &cfg), Err(Error::Degenerate(_))));
        assert!(forward_dataset(&cube, &[], &cfg).is_err());
    }

    #[test]
    fn parallel_matches_serial() {
        let spec = GridSpec::new(4.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_grid(spec, &mut rng);
        let cfg = small_config(FieldRegime::NearField);
        let vps = crate::geometry::viewpoint_grid(4, 3, [0.0, 4.0], [0.5, 2.0]).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let par = pool.install(|| forward_dataset(&g, &vps, &cfg).unwrap());
        let serial: Vec<SignalTensor> = vps.iter().map(|vp| forward(&g, vp, &cfg).unwrap()).collect();
        for (a, b) in par.signals.iter().zip(&serial) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(*x, y / par.scale);
            }
        }
    }

    #[test]
    fn streaming_context_matches_cached() {
        let spec = GridSpec::with_count(2.0, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_grid(spec, &mut rng);
        let cfg = small_config(FieldRegime::NearField);
        let vps = crate::geometry::viewpoint_grid(3, 2, [0.0, 4.0], [0.5, 2.0]).unwrap();
        let ds = forward_dataset(&g, &vps, &cfg).unwrap();
        let cached = GrtContext::new(&ds, &[1, 4], &spec).unwrap();
        let streamed = GrtContext::with_cache_limit(&ds, &[1, 4], &spec, 0).unwrap();
        assert!(cached.is_cached() && !streamed.is_cached());
        for k in 0..2 {
            let a = cached.apply(k, &g.values).unwrap();
            assert_eq!(a, streamed.apply(k, &g.values).unwrap());
            assert_eq!(a, ds.signals[[1, 4][k]]);
            assert_eq!(cached.apply_adjoint(k, &a).unwrap(), streamed.apply_adjoint(k, &a).unwrap());
        }
    }

    #[test]
    fn split_sampling() {
        let s = Split::sample(441, 100, 100, 5).unwrap();
        assert_eq!(s.train.len(), 100);
        assert_eq!(s.test.len(), 100);
        assert!(s.validate(441).is_ok());
        assert_eq!(s, Split::sample(441, 100, 100, 5).unwrap());
        assert_ne!(s, Split::sample(441, 100, 100, 6).unwrap());
        assert!(Split::sample(10, 8, 3, 0).is_err());
        let dup = Split { train: vec![1, 2], test: vec![2] };
        assert!(dup.validate(5).is_err());
    }
}
