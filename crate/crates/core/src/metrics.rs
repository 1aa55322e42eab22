//! Scene and signal quality metrics.
//!
//! * m-SSIM: mean SSIM over z-slices of the magnitude grids.
//! * m-COS: cosine similarity of the flattened magnitude grids.
//! * t-IoU: intersection over union of thresholded magnitude masks.
//! * p-RMSE: RMS of the wrapped phase error of predicted signals, radians.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grt::{Dataset, GrtContext, SignalTensor};
use crate::scene::VoxelGrid;
use crate::wrap_phase;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const DEFAULT_THRESHOLD: f64 = 0.2;

fn check_specs(a: &VoxelGrid, b: &VoxelGrid) -> Result<()> {
    if a.spec != b.spec {
        return Err(Error::Shape(format!("grid specs differ: {:?} vs {:?}", a.spec, b.spec)));
    }
    Ok(())
}

/// Normalized 1-D Gaussian window. The size is `SSIM_WINDOW`, reduced to the
/// largest odd size not exceeding `n` for images smaller than the window.
pub fn gaussian_window(n: usize) -> Vec<f64> {
    let mut size = SSIM_WINDOW.min(n);
    if size.is_multiple_of(2) {
        size -= 1;
    }
    let half = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of a row-major `n x n` image.
fn filter_valid(img: &[f64], n: usize, w: &[f64]) -> Vec<f64> {
    let m = n + 1 - w.len();
    let mut rows = vec![0.0; n * m];
    for r in 0..n {
        for c in 0..m {
            rows[r * m + c] = w.iter().enumerate().map(|(k, wk)| wk * img[r * n + c + k]).sum();
        }
    }
    let mut out = vec![0.0; m * m];
    for r in 0..m {
        for c in 0..m {
            out[r * m + c] = w.iter().enumerate().map(|(k, wk)| wk * rows[(r + k) * m + c]).sum();
        }
    }
    out
}

/// Mean SSIM of two row-major `n x n` images with dynamic range 1.
pub fn ssim_2d(x: &[f64], y: &[f64], n: usize) -> f64 {
    let w = gaussian_window(n);
    let mu_x = filter_valid(x, n, &w);
    let mu_y = filter_valid(y, n, &w);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let e_xx = filter_valid(&xx, n, &w);
    let e_yy = filter_valid(&yy, n, &w);
    let e_xy = filter_valid(&xy, n, &w);
    let count = mu_x.len();
    let mut total = 0.0;
    for i in 0..count {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cxy = e_xy[i] - mx * my;
        total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
            / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    total / count as f64
}

/// Magnitudes of one z-slice as a row-major `[ix][iy]` image.
fn z_slice(values: &[f64], n: usize, iz: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * n);
    for ix in 0..n {
        for iy in 0..n {
            out.push(values[(ix * n + iy) * n + iz]);
        }
    }
    out
}

pub fn m_ssim(recon: &VoxelGrid, truth: &VoxelGrid) -> Result<f64> {
    check_specs(recon, truth)?;
    let (mut a, mut b) = (recon.magnitudes(), truth.magnitudes());
    let scale = recon.max_magnitude().max(truth.max_magnitude());
    if scale > 0.0 {
        a.iter_mut().chain(b.iter_mut()).for_each(|v| *v /= scale);
    }
    let n = recon.spec.n;
    let total: f64 = (0..n).map(|iz| ssim_2d(&z_slice(&a, n, iz), &z_slice(&b, n, iz), n)).sum();
    Ok(total / n as f64)
}

pub fn m_cos(recon: &VoxelGrid, truth: &VoxelGrid) -> Result<f64> {
    check_specs(recon, truth)?;
    let (a, b) = (recon.magnitudes(), truth.magnitudes());
    let na = a.iter().map(|v| v * v).sum::<f64>();
    let nb = b.iter().map(|v| v * v).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of an all-zero grid".into()));
    }
    // one square root of the product keeps cos(a, a) exactly 1
    Ok(a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (na * nb).sqrt())
}

fn mask(g: &VoxelGrid, threshold: f64) -> Vec<bool> {
    let m = g.max_magnitude();
    if m == 0.0 {
        return vec![false; g.values.len()];
    }
    g.values.iter().map(|v| v.norm() / m >= threshold).collect()
}

pub fn t_iou(recon: &VoxelGrid, truth: &VoxelGrid, threshold: f64) -> Result<f64> {
    check_specs(recon, truth)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain(format!("threshold {threshold} outside (0, 1)")));
    }
    let (a, b) = (mask(recon, threshold), mask(truth, threshold));
    let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(&b).filter(|(x, y)| **x || **y).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn p_rmse(pred: &[SignalTensor], truth: &[SignalTensor]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "p-RMSE needs equal non-empty lists, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        p.check_shape(t)?;
        for (a, b) in p.values.iter().zip(&t.values) {
            let d = wrap_phase(a.arg() - b.arg());
            sum += d * d;
            count += 1;
        }
    }
    Ok((sum / count as f64).sqrt())
}

/// One row of an evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub m_ssim: f64,
    pub m_cos: f64,
    pub t_iou: f64,
    pub p_rmse: f64,
    pub threshold: f64,
    pub slice_axis: String,
    pub test_viewpoints: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "model,m-SSIM,m-COS,t-IoU,p-RMSE";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.4},{:.4},{:.4},{:.4}",
            self.model, self.m_ssim, self.m_cos, self.t_iou, self.p_rmse
        )
    }

    /// Header plus rows.
    pub fn csv(rows: &[MetricsReport]) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in rows {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// All four metrics. `recon` and `truth` must share a grid; p-RMSE compares
/// the normalized forward model of `recon` at the dataset's test viewpoints
/// with the stored test signals.
pub fn evaluate(
    model: &str,
    recon: &VoxelGrid,
    truth: &VoxelGrid,
    dataset: &Dataset,
    threshold: f64,
) -> Result<MetricsReport> {
    check_specs(recon, truth)?;
    if dataset.split.test.is_empty() {
        return Err(Error::Domain("dataset has no test viewpoints".into()));
    }
    let ctx = GrtContext::with_cache_limit(dataset, &dataset.split.test, &recon.spec, 0)?;
    let preds = (0..ctx.len())
        .map(|k| ctx.apply(k, &recon.values))
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<SignalTensor> = dataset.split.test.iter().map(|&i| dataset.signals[i].clone()).collect();
    Ok(MetricsReport {
        model: model.to_string(),
        m_ssim: m_ssim(recon, truth)?,
        m_cos: m_cos(recon, truth)?,
        t_iou: t_iou(recon, truth, threshold)?,
        p_rmse: p_rmse(&preds, &truths)?,
        threshold,
        slice_axis: "z".into(),
        test_viewpoints: ctx.len(),
    })
}
