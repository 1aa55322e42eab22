//! Radar acquisition geometry.
//!
//! A viewpoint is a point on a sphere of radius `standoff_radius` around the
//! scene origin, addressed by polar angle `theta` (measured from +z) and
//! azimuth `phi`. The TX and RX arrays are linear and mutually orthogonal, both
//! lying in the plane tangent to the sphere at the array center, so the array
//! normal always points at the origin.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Antenna pitch used throughout the reference experiments, meters.
pub const DEFAULT_ANTENNA_SPACING: f64 = 1.4276e-3;

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    /// Polar angle from +z, radians, in `[0, pi]`.
    pub theta: f64,
    /// Azimuth, radians, in `[0, 2 pi)`.
    pub phi: f64,
}

impl Viewpoint {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=PI).contains(&theta) {
            return Err(Error::Domain(format!("theta {theta} outside [0, pi]")));
        }
        if !(0.0..TAU).contains(&phi) {
            return Err(Error::Domain(format!("phi {phi} outside [0, 2pi)")));
        }
        Ok(Self { theta, phi })
    }

    /// Offset direction of the TX array.
    pub fn tx_direction(&self) -> Vec3 {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [-ct * cp, -ct * sp, st]
    }

    /// Offset direction of the RX array.
    pub fn rx_direction(&self) -> Vec3 {
        let (sp, cp) = self.phi.sin_cos();
        [-sp, cp, 0.0]
    }

    /// Unit vector from the origin toward the array center.
    pub fn boresight(&self) -> Vec3 {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldRegime {
    /// Keeps the per-voxel, per-pair `1 / R_b^2` spreading weight.
    NearField,
    /// Drops the spreading weight (absorbed into the global normalization).
    FarField,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarConfig {
    pub n_freq: usize,
    pub f_lo: f64,
    pub f_hi: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub antenna_spacing: f64,
    pub standoff_radius: f64,
    pub field_regime: FieldRegime,
}

impl Default for RadarConfig {
    /// 100 frequencies over 95-105 GHz, 16 TX by 16 RX, 10 m standoff, near field.
    fn default() -> Self {
        Self {
            n_freq: 100,
            f_lo: 95e9,
            f_hi: 105e9,
            n_tx: 16,
            n_rx: 16,
            antenna_spacing: DEFAULT_ANTENNA_SPACING,
            standoff_radius: 10.0,
            field_regime: FieldRegime::NearField,
        }
    }
}

impl RadarConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.f_lo > 0.0
            && self.f_lo.is_finite()
            && self.f_hi.is_finite()
            && self.n_freq >= 1
            && self.n_tx >= 1
            && self.n_rx >= 1
            && self.antenna_spacing > 0.0
            && self.standoff_radius > 0.0;
        if !ok {
            return Err(Error::Domain(format!("invalid radar config {self:?}")));
        }
        // A single-frequency radar only needs f_lo.
        if self.n_freq > 1 && self.f_lo >= self.f_hi {
            return Err(Error::Domain(format!(
                "f_lo ({}) must be below f_hi ({})",
                self.f_lo, self.f_hi
            )));
        }
        Ok(())
    }

    pub fn n_pairs(&self) -> usize {
        self.n_tx * self.n_rx
    }

    /// Number of complex samples in one viewpoint's signal tensor.
    pub fn signal_len(&self) -> usize {
        self.n_freq * self.n_tx * self.n_rx
    }
}

/// `k = 2 pi f / c0`, rad/m.
pub fn wavenumber(f: f64) -> Result<f64> {
    if !(f > 0.0) || !f.is_finite() {
        return Err(Error::Domain(format!("frequency must be positive, got {f}")));
    }
    Ok(TAU * f / SPEED_OF_LIGHT)
}

/// Uniform frequency samples with both band edges included. With
/// `n_freq == 1` the grid is just `[f_lo]`.
pub fn frequency_grid(config: &RadarConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let n = config.n_freq;
    if n == 1 {
        return Ok(vec![config.f_lo]);
    }
    let step = (config.f_hi - config.f_lo) / (n - 1) as f64;
    let mut freqs: Vec<f64> = (0..n).map(|i| config.f_lo + step * i as f64).collect();
    freqs[n - 1] = config.f_hi;
    Ok(freqs)
}

pub fn radar_center(vp: &Viewpoint, r: f64) -> Vec3 {
    let b = vp.boresight();
    [r * b[0], r * b[1], r * b[2]]
}

#[derive(Clone, Debug, PartialEq)]
pub struct AntennaArray {
    pub center: Vec3,
    pub tx: Vec<Vec3>,
    pub rx: Vec<Vec3>,
}

/// Element `m` (1-based) sits at `center + s (m + 1/2) d`, so both arrays are
/// one-sided offsets from the center.
pub fn antenna_array(vp: &Viewpoint, config: &RadarConfig) -> AntennaArray {
    let center = radar_center(vp, config.standoff_radius);
    let place = |count: usize, dir: Vec3| -> Vec<Vec3> {
        (1..=count)
            .map(|m| {
                let off = config.antenna_spacing * (m as f64 + 0.5);
                [
                    center[0] + off * dir[0],
                    center[1] + off * dir[1],
                    center[2] + off * dir[2],
                ]
            })
            .collect()
    };
    AntennaArray {
        center,
        tx: place(config.n_tx, vp.tx_direction()),
        rx: place(config.n_rx, vp.rx_direction()),
    }
}

/// Bistatic range `|x - tx| + |x - rx|`.
#[inline]
pub fn range_bistatic(x: Vec3, tx: Vec3, rx: Vec3) -> f64 {
    norm(sub(x, tx)) + norm(sub(x, rx))
}

fn linspace(n: usize, range: [f64; 2]) -> Vec<f64> {
    if n == 1 {
        return vec![range[0]];
    }
    let step = (range[1] - range[0]) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { range[1] } else { range[0] + step * i as f64 })
        .collect()
}

/// Cartesian product of uniformly sampled azimuths and elevations, endpoints
/// included, elevation-major (all azimuths of the first elevation come first).
pub fn viewpoint_grid(
    n_az: usize,
    n_el: usize,
    az_range: [f64; 2],
    el_range: [f64; 2],
) -> Result<Vec<Viewpoint>> {
    if n_az == 0 || n_el == 0 {
        return Err(Error::Domain("viewpoint grid needs at least one sample per axis".into()));
    }
    if az_range[0] > az_range[1] || el_range[0] > el_range[1] {
        return Err(Error::Domain("viewpoint ranges must be ordered".into()));
    }
    let az = linspace(n_az, az_range);
    let el = linspace(n_el, el_range);
    let mut out = Vec::with_capacity(n_az * n_el);
    for &theta in &el {
        for &phi in &az {
            out.push(Viewpoint::new(theta, phi)?);
        }
    }
    Ok(out)
}

/// Azimuth range covering the full circle with `n` samples and no duplicate
/// at `2 pi`.
pub fn full_azimuth_range(n: usize) -> [f64; 2] {
    [0.0, TAU * (n as f64 - 1.0) / n as f64]
}

pub const FULL_ELEVATION_RANGE: [f64; 2] = [0.0, PI];
