//! Training loop: render the model on the inverse grid, push it through the
//! GRT of every training viewpoint, pull the loss cotangents back with the
//! adjoint, and take one AdamW step per epoch on the summed gradient.

mod adamw;
mod loss;

use std::path::PathBuf;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grt::{Dataset, GrtContext};
use crate::inr::{backward, forward_with_tape, save_checkpoint, MlpParams};
use crate::scene::{voxel_centers, GridSpec};

pub use adamw::{adamw_step, AdamWState, BETA1, BETA2, EPSILON};
pub use loss::{loss, LossKind, LossValue, LossWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// The learning rate halves every this many epochs.
    pub halve_every: usize,
    #[serde(flatten)]
    pub loss: LossWeights,
    pub seed: u64,
    pub inverse_grid: GridSpec,
    /// Where to write the model state if training diverges.
    #[serde(skip)]
    pub dump_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(inverse_grid: GridSpec) -> Self {
        Self {
            epochs: 500,
            lr: 1e-2,
            weight_decay: 1e-2,
            halve_every: 100,
            loss: LossWeights::default(),
            seed: 0,
            inverse_grid,
            dump_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || !(self.lr > 0.0) || self.halve_every == 0 {
            return Err(Error::Domain("epochs, lr and halve_every must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Domain("weight_decay must be non-negative".into()));
        }
        self.loss.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * 0.5f64.powi((epoch / self.halve_every) as i32)
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Mean per-viewpoint loss of the parameters at the start of each epoch.
    pub history: Vec<LossValue>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub best_params: MlpParams,
    pub final_params: MlpParams,
    /// How often each dataset viewpoint entered a gradient computation.
    pub viewpoint_usage: Vec<usize>,
}

impl TrainReport {
    /// Per-epoch loss table with header `epoch,total,magnitude,phase,lr`.
    pub fn loss_csv(&self, config: &TrainConfig) -> String {
        let mut s = String::from("epoch,total,magnitude,phase,lr\n");
        for (e, l) in self.history.iter().enumerate() {
            s.push_str(&format!("{e},{:e},{:e},{:e},{:e}\n", l.total, l.magnitude, l.phase, config.lr_at(e)));
        }
        s
    }
}

/// Loss of a voxel grid summed over the context's viewpoints, reported as the
/// mean, together with the gradient of the sum with respect to every voxel.
///
/// Per-viewpoint work runs in parallel; the results are added in viewpoint
/// order so the output does not depend on the thread count.
pub fn voxel_gradient(
    values: &[Complex64],
    dataset: &Dataset,
    ctx: &GrtContext,
    weights: &LossWeights,
) -> Result<(LossValue, Vec<Complex64>)> {
    if ctx.is_empty() {
        return Err(Error::Domain("no viewpoints to train on".into()));
    }
    let parts: Vec<(LossValue, Vec<Complex64>)> = (0..ctx.len())
        .into_par_iter()
        .map(|k| {
            let pred = ctx.apply(k, values)?;
            let (lv, cot) = loss(&pred, &dataset.signals[ctx.indices[k]], weights)?;
            let g = ctx.apply_adjoint(k, &crate::grt::SignalTensor { values: cot, ..pred })?;
            Ok((lv, g))
        })
        .collect::<Result<_>>()?;
    let mut total = LossValue::default();
    let mut grad = vec![Complex64::new(0.0, 0.0); values.len()];
    for (lv, g) in parts {
        total.add(&lv);
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    total.scale(1.0 / ctx.len() as f64);
    Ok((total, grad))
}

/// Mean training loss and parameter gradient of the model.
pub fn evaluate(
    params: &MlpParams,
    dataset: &Dataset,
    ctx: &GrtContext,
    weights: &LossWeights,
) -> Result<(LossValue, Vec<f64>)> {
    let (values, tape) = forward_with_tape(params, &voxel_centers(&ctx.spec))?;
    let (lv, vgrad) = voxel_gradient(&values, dataset, ctx, weights)?;
    Ok((lv, backward(params, &tape, &vgrad)?))
}

/// Builds a context over the dataset's training split on `spec`.
pub fn training_context(dataset: &Dataset, spec: &GridSpec) -> Result<GrtContext> {
    GrtContext::new(dataset, &dataset.split.train, spec)
}

pub fn train(dataset: &Dataset, model: MlpParams, ctx: &GrtContext, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if ctx.spec != config.inverse_grid {
        return Err(Error::Shape("context grid differs from the configured inverse grid".into()));
    }
    if ctx.is_empty() {
        return Err(Error::Domain("training split is empty".into()));
    }
    if let Some(i) = ctx.indices.iter().find(|i| dataset.split.test.contains(i)) {
        return Err(Error::Domain(format!("viewpoint {i} is in the test split")));
    }
    let centers = voxel_centers(&ctx.spec);
    let mut usage = vec![0usize; dataset.len()];
    let mut params = model;
    let mut state = AdamWState::new(params.len());
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, MlpParams)> = None;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let (values, tape) = forward_with_tape(&params, &centers)?;
        let (lv, vgrad) = voxel_gradient(&values, dataset, ctx, &config.loss)?;
        for &i in &ctx.indices {
            usage[i] += 1;
        }
        if !lv.total.is_finite() {
            dump_state(config, &params, epoch, lv.total);
            return Err(Error::Divergence { epoch, loss: lv.total, lr });
        }
        history.push(lv);
        if best.as_ref().is_none_or(|b| lv.total < b.1) {
            best = Some((epoch, lv.total, params.clone()));
        }
        let grads = backward(&params, &tape, &vgrad)?;
        if let Err(e) = adamw_step(&mut params, &grads, &mut state, lr, config.weight_decay) {
            dump_state(config, &params, epoch, lv.total);
            return Err(match e {
                Error::NonFinite { .. } => Error::Divergence { epoch, loss: lv.total, lr },
                other => other,
            });
        }
    }
    let (best_epoch, best_loss, best_params) = best.expect("at least one epoch");
    Ok(TrainReport {
        history,
        best_epoch,
        best_loss,
        best_params,
        final_params: params,
        viewpoint_usage: usage,
    })
}

fn dump_state(config: &TrainConfig, params: &MlpParams, epoch: usize, loss: f64) {
    let Some(dir) = &config.dump_dir else { return };
    // best effort: the divergence error is what the caller acts on
    let _ = std::fs::create_dir_all(dir);
    let _ = save_checkpoint(params, &dir.join("divergence.ckpt"));
    let _ = std::fs::write(
        dir.join("divergence.txt"),
        format!("epoch = {epoch}\nloss = {loss}\nlr = {}\n", config.lr_at(epoch)),
    );
}
