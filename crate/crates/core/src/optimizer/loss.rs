use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grt::SignalTensor;
use crate::wrap_phase;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mean absolute magnitude and phase errors.
    #[default]
    L1,
    /// Mean squared magnitude and phase errors.
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_mag: f64,
    pub w_phase: f64,
    /// Lower clamp on `|z|` in the phase derivative.
    pub phase_eps: f64,
    pub kind: LossKind,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_mag: 1.0,
            w_phase: 5000.0,
            phase_eps: 1e-8,
            kind: LossKind::L1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(self.w_mag) || !ok(self.w_phase) || self.w_mag + self.w_phase == 0.0 {
            return Err(Error::Domain(format!(
                "loss weights must be non-negative and not both zero (w_mag = {}, w_phase = {})",
                self.w_mag, self.w_phase
            )));
        }
        if !(self.phase_eps > 0.0) {
            return Err(Error::Domain("phase_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted loss and its two unweighted-mean components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub magnitude: f64,
    pub phase: f64,
}

impl LossValue {
    pub(crate) fn add(&mut self, o: &LossValue) {
        self.total += o.total;
        self.magnitude += o.magnitude;
        self.phase += o.phase;
    }

    pub(crate) fn scale(&mut self, s: f64) {
        self.total *= s;
        self.magnitude *= s;
        self.phase *= s;
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Magnitude/phase loss between two signal tensors.
///
/// Returns the loss and its cotangent `dL/dRe(pred) + i dL/dIm(pred)` for every
/// entry of `pred`.
pub fn loss(pred: &SignalTensor, target: &SignalTensor, w: &LossWeights) -> Result<(LossValue, Vec<Complex64>)> {
    pred.check_shape(target)?;
    let n = pred.values.len() as f64;
    let mut mag = 0.0;
    let mut pha = 0.0;
    let mut grad = Vec::with_capacity(pred.values.len());
    for (p, t) in pred.values.iter().zip(&target.values) {
        let r = p.norm();
        let dm = r - t.norm();
        let dp = wrap_phase(p.arg() - t.arg());
        let (gm, gp) = match w.kind {
            LossKind::L1 => {
                mag += dm.abs();
                pha += dp.abs();
                (sign(dm), sign(dp))
            }
            LossKind::L2 => {
                mag += dm * dm;
                pha += dp * dp;
                (2.0 * dm, 2.0 * dp)
            }
        };
        let rc = r.max(w.phase_eps);
        // d|z| = z / |z|, d arg z = (-b + i a) / |z|^2
        let dmag = *p / rc;
        let darg = Complex64::new(-p.im, p.re) / (rc * rc);
        grad.push((dmag * (w.w_mag * gm) + darg * (w.w_phase * gp)) / n);
    }
    let (magnitude, phase) = (mag / n, pha / n);
    let value = LossValue {
        total: w.w_mag * magnitude + w.w_phase * phase,
        magnitude,
        phase,
    };
    Ok((value, grad))
}
