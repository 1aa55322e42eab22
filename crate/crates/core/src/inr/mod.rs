//! Coordinate MLP `R^3 -> C` with a hand-written backward pass.
//!
//! Two unit types are supported. `N` units are `Linear -> LeakyReLU ->
//! LayerNorm` with a `tanh` output; `S` units are `sin(w0 * Linear)` with a
//! `sin` output. Points are evaluated one at a time with plain loops, so a
//! batch gives exactly the same bits as evaluating its points separately.

mod checkpoint;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scene::{voxel_centers, GridSpec, VoxelGrid};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

/// Variance floor inside LayerNorm.
pub const LAYER_NORM_EPS: f64 = 1e-10;

/// Points per work item when a batch is split across threads. Fixed so that
/// gradient sums do not depend on the thread count.
const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    N,
    S,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationConfig {
    pub variant: Variant,
    pub hidden_width: usize,
    /// Number of hidden units.
    pub depth: usize,
    pub leaky_slope: f64,
    pub siren_w0: f64,
    /// Input coordinates are divided by this before the first layer.
    pub half_extent: f64,
}

impl ActivationConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            hidden_width: 64,
            depth: 4,
            leaky_slope: 0.01,
            siren_w0: 30.0,
            half_extent: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.depth == 0 {
            return Err(Error::Domain("hidden_width and depth must be at least 1".into()));
        }
        if !(self.half_extent > 0.0 && self.half_extent.is_finite()) {
            return Err(Error::Domain(format!("half_extent must be positive, got {}", self.half_extent)));
        }
        if !self.leaky_slope.is_finite() || !(self.siren_w0 > 0.0 && self.siren_w0.is_finite()) {
            return Err(Error::Domain("leaky_slope must be finite and siren_w0 positive".into()));
        }
        Ok(())
    }
}

/// Offsets of one layer's parameters inside the flat parameter vector.
/// Weights are row-major `[fan_out][fan_in]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: usize,
    pub bias: usize,
    /// LayerNorm gain and offset (hidden `N` units only).
    pub norm: Option<(usize, usize)>,
}

impl LayerLayout {
    fn end(&self) -> usize {
        match self.norm {
            Some((_, o)) => o + self.fan_out,
            None => self.bias + self.fan_out,
        }
    }
}

fn build_layout(config: &ActivationConfig) -> Vec<LayerLayout> {
    let w = config.hidden_width;
    let mut layers = Vec::with_capacity(config.depth + 1);
    let mut at = 0;
    for k in 0..=config.depth {
        let fan_in = if k == 0 { 3 } else { w };
        let output = k == config.depth;
        let fan_out = if output { 2 } else { w };
        let weight = at;
        let bias = weight + fan_in * fan_out;
        let norm = (!output && config.variant == Variant::N)
            .then(|| (bias + fan_out, bias + 2 * fan_out));
        let l = LayerLayout { fan_in, fan_out, weight, bias, norm };
        at = l.end();
        layers.push(l);
    }
    layers
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    config: ActivationConfig,
    layers: Vec<LayerLayout>,
    /// All parameters, layer by layer: weights, biases, then gain/offset.
    pub values: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(config: ActivationConfig) -> Result<Self> {
        config.validate()?;
        let layers = build_layout(&config);
        let n = layers.last().map_or(0, LayerLayout::end);
        Ok(Self { config, layers, values: vec![0.0; n] })
    }

    pub fn from_values(config: ActivationConfig, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if values.len() != p.values.len() {
            return Err(Error::Shape(format!(
                "model needs {} parameters, got {}",
                p.values.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: format!("parameter {i} ({})", p.param_name(i)) });
        }
        p.values = values;
        Ok(p)
    }

    pub fn config(&self) -> &ActivationConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerLayout] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Human-readable location of a flat parameter index, e.g. `layer 2 bias`.
    pub fn param_name(&self, index: usize) -> String {
        for (k, l) in self.layers.iter().enumerate() {
            if index < l.end() {
                let part = if index < l.bias {
                    "weight"
                } else if index < l.bias + l.fan_out {
                    "bias"
                } else if matches!(l.norm, Some((_, o)) if index < o) {
                    "layernorm gain"
                } else {
                    "layernorm offset"
                };
                return format!("layer {k} {part}");
            }
        }
        format!("index {index} (out of range)")
    }

    fn check_points(&self, points: &[Vec3]) -> Result<()> {
        match points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            Some(i) => Err(Error::NonFinite { context: format!("input point {i}") }),
            None => Ok(()),
        }
    }
}

/// Seeded initialization.
///
/// `N`: hidden weights `U(-sqrt(6/fan_in), +sqrt(6/fan_in))`, zero biases,
/// unit gains, zero offsets; output weights `U(+-1/sqrt(fan_in))`.
///
/// `S`: first-layer weights `U(-1/fan_in, 1/fan_in)`, later weights
/// `U(+-sqrt(6/fan_in)/w0)`, biases `U(+-1/sqrt(fan_in))`.
pub fn init(config: ActivationConfig, seed: u64) -> Result<MlpParams> {
    let mut p = MlpParams::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = config.depth;
    for (k, l) in p.layers.clone().iter().enumerate() {
        let fan = l.fan_in as f64;
        let (w_bound, b_bound) = match config.variant {
            Variant::N if k == depth => (1.0 / fan.sqrt(), 0.0),
            Variant::N => ((6.0 / fan).sqrt(), 0.0),
            Variant::S if k == 0 => (1.0 / fan, 1.0 / fan.sqrt()),
            Variant::S => ((6.0 / fan).sqrt() / config.siren_w0, 1.0 / fan.sqrt()),
        };
        for v in &mut p.values[l.weight..l.bias] {
            *v = rng.random_range(-w_bound..=w_bound);
        }
        if b_bound > 0.0 {
            for v in &mut p.values[l.bias..l.bias + l.fan_out] {
                *v = rng.random_range(-b_bound..=b_bound);
            }
        }
        if let Some((g, _)) = l.norm {
            p.values[g..g + l.fan_out].fill(1.0);
        }
    }
    Ok(p)
}

/// Intermediates of one layer for every point of a batch.
#[derive(Clone, Debug, Default)]
pub struct TapeLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Layer inputs, `[point][fan_in]`.
    pub input: Vec<f64>,
    /// Pre-activations `Wx + b`, `[point][fan_out]`.
    pub pre: Vec<f64>,
    /// LayerNorm outputs before gain/offset (hidden `N` units only).
    pub normalized: Vec<f64>,
    /// `1 / sqrt(var + eps)` per point (hidden `N` units only).
    pub inv_std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Tape {
    config: ActivationConfig,
    n_params: usize,
    n_points: usize,
    pub layers: Vec<TapeLayer>,
}

impl Tape {
    fn new(params: &MlpParams, n_points: usize) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| {
                let normed = l.norm.is_some();
                TapeLayer {
                    fan_in: l.fan_in,
                    fan_out: l.fan_out,
                    input: Vec::with_capacity(n_points * l.fan_in),
                    pre: Vec::with_capacity(n_points * l.fan_out),
                    normalized: Vec::with_capacity(if normed { n_points * l.fan_out } else { 0 }),
                    inv_std: Vec::with_capacity(if normed { n_points } else { 0 }),
                }
            })
            .collect();
        Self {
            config: params.config,
            n_params: params.len(),
            n_points,
            layers,
        }
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Total number of cached scalars.
    pub fn n_values(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.input.len() + l.pre.len() + l.normalized.len() + l.inv_std.len())
            .sum()
    }

    fn append(&mut self, other: Tape) {
        for (a, b) in self.layers.iter_mut().zip(other.layers) {
            a.input.extend_from_slice(&b.input);
            a.pre.extend_from_slice(&b.pre);
            a.normalized.extend_from_slice(&b.normalized);
            a.inv_std.extend_from_slice(&b.inv_std);
        }
        self.n_points += other.n_points;
    }
}

fn eval_point(params: &MlpParams, p: Vec3, tape: &mut Tape, act: &mut Vec<f64>, next: &mut Vec<f64>) -> Complex64 {
    let cfg = &params.config;
    let v = &params.values;
    act.clear();
    act.extend(p.iter().map(|c| c / cfg.half_extent));
    let last = params.layers.len() - 1;
    for (k, (l, t)) in params.layers.iter().zip(tape.layers.iter_mut()).enumerate() {
        t.input.extend_from_slice(act);
        next.clear();
        for o in 0..l.fan_out {
            let row = &v[l.weight + o * l.fan_in..l.weight + (o + 1) * l.fan_in];
            let mut z = v[l.bias + o];
            for (w, x) in row.iter().zip(act.iter()) {
                z += w * x;
            }
            next.push(z);
        }
        t.pre.extend_from_slice(next);
        if k == last {
            break;
        }
        match cfg.variant {
            Variant::N => {
                let slope = cfg.leaky_slope;
                next.iter_mut().for_each(|z| {
                    if *z < 0.0 {
                        *z *= slope
                    }
                });
                let n = next.len() as f64;
                let mean = next.iter().sum::<f64>() / n;
                let var = next.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                t.inv_std.push(inv);
                let (g, b) = l.norm.expect("hidden N layer has layernorm");
                for (i, a) in next.iter_mut().enumerate() {
                    let nrm = (*a - mean) * inv;
                    t.normalized.push(nrm);
                    *a = v[g + i] * nrm + v[b + i];
                }
            }
            Variant::S => {
                let w0 = cfg.siren_w0;
                next.iter_mut().for_each(|z| *z = (w0 * *z).sin());
            }
        }
        std::mem::swap(act, next);
    }
    let (re, im) = match cfg.variant {
        Variant::N => (next[0].tanh(), next[1].tanh()),
        Variant::S => (next[0].sin(), next[1].sin()),
    };
    Complex64::new(re, im)
}

fn forward_chunk(params: &MlpParams, points: &[Vec3]) -> (Vec<Complex64>, Tape) {
    let mut tape = Tape::new(params, points.len());
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let out = points
        .iter()
        .map(|&p| eval_point(params, p, &mut tape, &mut a, &mut b))
        .collect();
    (out, tape)
}

/// Evaluates the model and records the intermediates needed by [`backward`].
pub fn forward_with_tape(params: &MlpParams, points: &[Vec3]) -> Result<(Vec<Complex64>, Tape)> {
    params.check_points(points)?;
    let parts: Vec<(Vec<Complex64>, Tape)> =
        points.par_chunks(CHUNK).map(|c| forward_chunk(params, c)).collect();
    let mut values = Vec::with_capacity(points.len());
    let mut tape = Tape::new(params, 0);
    for (v, t) in parts {
        values.extend(v);
        tape.append(t);
    }
    Ok((values, tape))
}

pub fn forward(params: &MlpParams, points: &[Vec3]) -> Result<Vec<Complex64>> {
    params.check_points(points)?;
    Ok(points
        .par_chunks(CHUNK)
        .flat_map_iter(|c| forward_chunk(params, c).0)
        .collect())
}

fn backward_range(params: &MlpParams, tape: &Tape, cot: &[Complex64], start: usize, grad: &mut [f64]) {
    let cfg = &params.config;
    let v = &params.values;
    let last = params.layers.len() - 1;
    let mut up: Vec<f64> = Vec::new();
    let mut down: Vec<f64> = Vec::new();
    for (j, c) in cot.iter().enumerate() {
        let i = start + j;
        for k in (0..=last).rev() {
            let l = &params.layers[k];
            let t = &tape.layers[k];
            let pre = &t.pre[i * l.fan_out..(i + 1) * l.fan_out];
            // `up` becomes dL/d(pre-activation)
            if k == last {
                up.clear();
                for (o, dy) in [c.re, c.im].into_iter().enumerate() {
                    let d = match cfg.variant {
                        Variant::N => {
                            let th = pre[o].tanh();
                            dy * (1.0 - th * th)
                        }
                        Variant::S => dy * pre[o].cos(),
                    };
                    up.push(d);
                }
            } else {
                match cfg.variant {
                    Variant::N => {
                        let (g, b) = l.norm.expect("hidden N layer has layernorm");
                        let nrm = &t.normalized[i * l.fan_out..(i + 1) * l.fan_out];
                        let inv = t.inv_std[i];
                        let n = l.fan_out as f64;
                        let mut mean_dn = 0.0;
                        let mut mean_dn_n = 0.0;
                        for o in 0..l.fan_out {
                            grad[g + o] += up[o] * nrm[o];
                            grad[b + o] += up[o];
                            let dn = up[o] * v[g + o];
                            up[o] = dn;
                            mean_dn += dn;
                            mean_dn_n += dn * nrm[o];
                        }
                        mean_dn /= n;
                        mean_dn_n /= n;
                        let slope = cfg.leaky_slope;
                        for o in 0..l.fan_out {
                            let da = inv * (up[o] - mean_dn - nrm[o] * mean_dn_n);
                            up[o] = if pre[o] < 0.0 { da * slope } else { da };
                        }
                    }
                    Variant::S => {
                        let w0 = cfg.siren_w0;
                        for o in 0..l.fan_out {
                            up[o] *= w0 * (w0 * pre[o]).cos();
                        }
                    }
                }
            }
            let input = &t.input[i * l.fan_in..(i + 1) * l.fan_in];
            down.clear();
            down.resize(l.fan_in, 0.0);
            for o in 0..l.fan_out {
                let d = up[o];
                grad[l.bias + o] += d;
                let w = l.weight + o * l.fan_in;
                for q in 0..l.fan_in {
                    grad[w + q] += d * input[q];
                    down[q] += v[w + q] * d;
                }
            }
            std::mem::swap(&mut up, &mut down);
        }
    }
}

/// Gradient of `sum_i Re(conj(cot_i) * out_i)` with respect to every
/// parameter, laid out like [`MlpParams::values`].
pub fn backward(params: &MlpParams, tape: &Tape, cotangents: &[Complex64]) -> Result<Vec<f64>> {
    if tape.config != params.config || tape.n_params != params.len() {
        return Err(Error::Shape("tape was recorded with a different model".into()));
    }
    if cotangents.len() != tape.n_points {
        return Err(Error::Shape(format!(
            "tape holds {} points but {} cotangents were given",
            tape.n_points,
            cotangents.len()
        )));
    }
    let n = params.len();
    let partial: Vec<Vec<f64>> = cotangents
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, cot)| {
            let mut g = vec![0.0; n];
            backward_range(params, tape, cot, c * CHUNK, &mut g);
            g
        })
        .collect();
    let mut grad = vec![0.0; n];
    for g in partial {
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    Ok(grad)
}

/// Evaluates the model at every voxel center of `spec`.
pub fn render(params: &MlpParams, spec: &GridSpec) -> Result<VoxelGrid> {
    let values = forward(params, &voxel_centers(spec))?;
    VoxelGrid::new(*spec, values)
}
