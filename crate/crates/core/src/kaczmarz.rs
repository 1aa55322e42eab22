//! Block Kaczmarz least-squares inversion with one block per viewpoint.
//!
//! Each block update is the normalized gradient projection
//! `x += lambda * A_v^H (d_v - A_v x) / ||A_v||^2`, where `||A_v||^2` comes
//! from a short Lanczos run on `A_v^H A_v`.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RadarConfig, Viewpoint};
use crate::grt::{Dataset, GrtContext, SignalTensor, ViewOperator};
use crate::scene::{GridSpec, VoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KaczmarzConfig {
    /// Full sweeps over all blocks.
    pub iterations: usize,
    pub relaxation: f64,
    pub power_iters: usize,
    pub seed: u64,
}

impl Default for KaczmarzConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            relaxation: 1.0,
            power_iters: 8,
            seed: 0,
        }
    }
}

impl KaczmarzConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.power_iters == 0 {
            return Err(Error::Domain("iterations and power_iters must be at least 1".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::Domain(format!("relaxation {} outside (0, 2)", self.relaxation)));
        }
        Ok(())
    }
}

fn norm_sq(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Largest eigenvalue of the symmetric tridiagonal matrix with diagonal
/// `alpha` and off-diagonal `beta`, by Sturm-sequence bisection.
fn tridiagonal_max_eigenvalue(alpha: &[f64], beta: &[f64]) -> f64 {
    let k = alpha.len();
    let count_below = |x: f64| {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..k {
            let off = if i == 0 { 0.0 } else { beta[i - 1] * beta[i - 1] / d };
            d = alpha[i] - x - off;
            if d == 0.0 {
                d = -f64::EPSILON * (x.abs() + 1.0);
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    let mut hi = 0.0f64;
    let mut lo = 0.0f64;
    for i in 0..k {
        let r = if i > 0 { beta[i - 1].abs() } else { 0.0 } + beta.get(i).map_or(0.0, |b| b.abs());
        hi = hi.max(alpha[i] + r);
        lo = lo.min(alpha[i] - r);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(mid) < k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Estimate of the largest eigenvalue of the Hermitian positive
/// semi-definite map `gram` (typically `A^H A`) from `iters` applications,
/// starting from a seeded random vector.
///
/// The iterates are those of power iteration; the estimate is the largest
/// Ritz value over the space they span (Lanczos with full
/// reorthogonalization), which is never below the plain power-iteration
/// value and never above the true eigenvalue.
pub fn power_norm_sq(
    n: usize,
    iters: usize,
    seed: u64,
    mut gram: impl FnMut(&[Complex64]) -> Result<Vec<Complex64>>,
) -> Result<f64> {
    if iters == 0 {
        return Err(Error::Domain("power_iters must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let nq = norm_sq(&q).sqrt();
    q.iter_mut().for_each(|v| *v /= nq);
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(iters);
    let (mut alpha, mut beta) = (Vec::with_capacity(iters), Vec::with_capacity(iters));
    for _ in 0..iters {
        let mut w = gram(&q)?;
        let a = dot(&q, &w).re;
        alpha.push(a);
        basis.push(q);
        // two passes of Gram-Schmidt against every previous direction
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let nw = norm_sq(&w).sqrt();
        if !(nw > 1e-12 * a.abs()) {
            break;
        }
        beta.push(nw);
        w.iter_mut().for_each(|v| *v /= nw);
        q = w;
    }
    beta.truncate(alpha.len() - 1);
    let est = tridiagonal_max_eigenvalue(&alpha, &beta);
    if !(est > 0.0) || !est.is_finite() {
        return Err(Error::Degenerate(format!("operator norm estimate is {est}")));
    }
    Ok(est)
}

/// `||F_v||_2^2` of the unnormalized single-viewpoint operator.
pub fn block_norm_estimate(vp: &Viewpoint, config: &RadarConfig, spec: &GridSpec, power_iters: usize) -> Result<f64> {
    let op = ViewOperator::new(vp, config, spec)?;
    power_norm_sq(spec.len(), power_iters, 0, |x| op.apply_adjoint(&op.apply(x)?))
}

/// Solves on the dataset's training split, or on every viewpoint when the
/// split is empty.
pub fn solve(dataset: &Dataset, spec: &GridSpec, kconfig: &KaczmarzConfig) -> Result<VoxelGrid> {
    let indices: Vec<usize> = if dataset.split.train.is_empty() {
        (0..dataset.len()).collect()
    } else {
        dataset.split.train.clone()
    };
    let ctx = GrtContext::new(dataset, &indices, spec)?;
    solve_with(dataset, &ctx, kconfig, |_, _| {})
}

/// Runs the sweeps over the viewpoints of `ctx`; `after_sweep` sees the
/// iterate after every full sweep.
pub fn solve_with(
    dataset: &Dataset,
    ctx: &GrtContext,
    kconfig: &KaczmarzConfig,
    mut after_sweep: impl FnMut(usize, &[Complex64]),
) -> Result<VoxelGrid> {
    kconfig.validate()?;
    if ctx.is_empty() {
        return Err(Error::Domain("no viewpoints to invert".into()));
    }
    let nv = ctx.spec.len();
    let norms: Vec<f64> = (0..ctx.len())
        .map(|k| {
            let seed = kconfig.seed.wrapping_add(ctx.indices[k] as u64);
            power_norm_sq(nv, kconfig.power_iters, seed, |x| ctx.apply_adjoint(k, &ctx.apply(k, x)?))
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..ctx.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(kconfig.seed));
    let mut x = vec![Complex64::new(0.0, 0.0); nv];
    for sweep in 0..kconfig.iterations {
        for &k in &order {
            let mut r: SignalTensor = ctx.apply(k, &x)?;
            let d = &dataset.signals[ctx.indices[k]];
            r.values.iter_mut().zip(&d.values).for_each(|(p, t)| *p = t - *p);
            let step = ctx.apply_adjoint(k, &r)?;
            let c = kconfig.relaxation / norms[k];
            x.iter_mut().zip(&step).for_each(|(a, b)| *a += b * c);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: format!("Kaczmarz iterate after sweep {sweep}") });
        }
        after_sweep(sweep, &x);
    }
    VoxelGrid::new(ctx.spec, x)
}

/// `sqrt(sum_v ||d_v - A_v x||^2)` over the viewpoints of `ctx`.
pub fn residual_norm(dataset: &Dataset, ctx: &GrtContext, x: &[Complex64]) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..ctx.len() {
        let p = ctx.apply(k, x)?;
        let d = &dataset.signals[ctx.indices[k]];
        total += p.values.iter().zip(&d.values).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
    }
    Ok(total.sqrt())
}
