//! The pipeline stages behind the CLI subcommands.
//!
//! A bundle written by [`run`] looks like
//!
//! ```text
//! <out>/experiment.toml      the spec
//! <out>/bundle.toml          config hash, completed stages, output checksums
//! <out>/dataset.toml, .bin   synthesized signals
//! <out>/truth.grid           ground truth on the inverse grid
//! <out>/<method>/            checkpoints, loss.csv, train.json, recon.grid
//! <out>/metrics.csv, .json   one row per method
//! <out>/render/<name>/       z slices as PGM
//! ```
//!
//! Every stage records its outputs with their SHA-256 in `bundle.toml`; a
//! rerun skips stages whose recorded outputs are still intact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::experiment::{ExperimentSpec, Method};
use super::files::{load_grid, quantize, read_dataset, save_grid, write_dataset, DatasetManifest, SceneInfo};
use super::render::{render_slices, Axis};
use crate::error::{Error, Result};
use crate::grt::{forward_dataset, Dataset, Split};
use crate::inr::{init, render as render_model, save_checkpoint};
use crate::kaczmarz;
use crate::metrics::{self, MetricsReport};
use crate::optimizer::{self, training_context, TrainReport};
use crate::scene::{resample, GridSpec, VoxelGrid};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Synthesizes the spec's scene and dataset and writes it to `manifest_path`.
/// Returns the dataset exactly as it reads back from disk.
pub fn synth(spec: &ExperimentSpec, manifest_path: &Path) -> Result<(Dataset, DatasetManifest)> {
    spec.validate()?;
    let truth = spec.scene.generate(&spec.forward_grid)?;
    let vps = spec.viewpoints.grid()?;
    let split = Split::sample(vps.len(), spec.viewpoints.n_train, spec.viewpoints.n_test, spec.seed)?;
    let ds = quantize(&forward_dataset(&truth, &vps, &spec.radar)?.with_split(split)?);
    let info = SceneInfo {
        scene: spec.scene.clone(),
        forward_grid: spec.forward_grid,
        inverse_grid: spec.inverse_grid,
    };
    let manifest = write_dataset(&ds, Some(info), manifest_path)?;
    Ok((ds, manifest))
}

/// Ground truth from a dataset manifest, resampled onto `target`.
pub fn truth_grid(manifest: &DatasetManifest, target: &GridSpec) -> Result<VoxelGrid> {
    let info = manifest
        .scene
        .as_ref()
        .ok_or_else(|| Error::Domain("dataset manifest records no scene; pass a truth grid".into()))?;
    resample(&info.scene.generate(&info.forward_grid)?, target)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub method: Method,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub final_loss: f64,
    pub train_viewpoints: Vec<usize>,
    /// Gradient evaluations per dataset viewpoint.
    pub viewpoint_usage: Vec<usize>,
}

/// Trains a RIFT model on the dataset's training split and writes
/// `best.ckpt`, `final.ckpt`, `loss.csv`, `train.json` and `recon.grid`
/// (the best model rendered on the inverse grid) into `out_dir`.
pub fn train(dataset: &Dataset, spec: &ExperimentSpec, method: Method, out_dir: &Path) -> Result<(TrainReport, VoxelGrid)> {
    let variant = method
        .variant()
        .ok_or_else(|| Error::Domain(format!("{method} is not a trainable method")))?;
    let mut config = spec.train_config();
    config.dump_dir = Some(out_dir.to_path_buf());
    let model = init(spec.activation_config(variant), spec.seed)?;
    let ctx = training_context(dataset, &spec.inverse_grid)?;
    let report = optimizer::train(dataset, model, &ctx, &config)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    save_checkpoint(&report.best_params, &out_dir.join("best.ckpt"))?;
    save_checkpoint(&report.final_params, &out_dir.join("final.ckpt"))?;
    write(&out_dir.join("loss.csv"), report.loss_csv(&config))?;
    let summary = TrainSummary {
        method,
        epochs: config.epochs,
        best_epoch: report.best_epoch,
        best_loss: report.best_loss,
        final_loss: report.history.last().map_or(f64::NAN, |l| l.total),
        train_viewpoints: dataset.split.train.clone(),
        viewpoint_usage: report.viewpoint_usage.clone(),
    };
    write(&out_dir.join("train.json"), serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    let recon = render_model(&report.best_params, &spec.inverse_grid)?;
    save_grid(&recon, &out_dir.join("recon.grid"))?;
    Ok((report, recon))
}

/// Block Kaczmarz inversion on the training split, written as a grid file.
pub fn invert(dataset: &Dataset, spec: &ExperimentSpec, out: &Path) -> Result<VoxelGrid> {
    let grid = kaczmarz::solve(dataset, &spec.inverse_grid, &spec.kaczmarz_config())?;
    save_grid(&grid, out)?;
    Ok(grid)
}

/// Computes the metric row and writes it as CSV to `out_csv` and as JSON
/// next to it.
pub fn eval(
    model: &str,
    recon: &VoxelGrid,
    truth: &VoxelGrid,
    dataset: &Dataset,
    threshold: f64,
    out_csv: &Path,
) -> Result<MetricsReport> {
    let truth = if truth.spec == recon.spec { truth.clone() } else { resample(truth, &recon.spec)? };
    let report = metrics::evaluate(model, recon, &truth, dataset, threshold)?;
    write(out_csv, MetricsReport::csv(std::slice::from_ref(&report)))?;
    write(&out_csv.with_extension("json"), report.to_json())?;
    Ok(report)
}

pub fn render(grid: &VoxelGrid, axis: Axis, out_dir: &Path) -> Result<Vec<PathBuf>> {
    render_slices(grid, axis, out_dir)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub name: String,
    pub seed: u64,
    /// SHA-256 of `experiment.toml`.
    pub config_hash: String,
    pub spec_file: String,
    pub completed: Vec<String>,
    /// Output path (relative to the bundle) to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl BundleManifest {
    fn stage_done(&self, dir: &Path, stage: &str, files: &[&str]) -> bool {
        self.completed.iter().any(|s| s == stage)
            && files.iter().all(|f| {
                self.outputs
                    .get(*f)
                    .is_some_and(|h| file_sha256(&dir.join(f)).is_ok_and(|actual| &actual == h))
            })
    }

    fn record(&mut self, dir: &Path, stage: &str, files: &[String]) -> Result<()> {
        for f in files {
            self.outputs.insert(f.clone(), file_sha256(&dir.join(f))?);
        }
        if !self.completed.iter().any(|s| s == stage) {
            self.completed.push(stage.to_string());
        }
        let text = toml::to_string(self).expect("bundle manifest serializes");
        write(&dir.join("bundle.toml"), text)
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub dir: PathBuf,
    pub truth: VoxelGrid,
    pub recons: Vec<(Method, VoxelGrid)>,
    pub reports: Vec<MetricsReport>,
}

/// Runs synth, the configured methods, evaluation and rendering into the
/// bundle directory `out`, resuming from any intact earlier stages.
pub fn run(spec: &ExperimentSpec, out: &Path) -> Result<RunResult> {
    spec.validate()?;
    let spec_text = spec.to_toml();
    let hash = spec.config_hash();
    let manifest_path = out.join("bundle.toml");
    let mut bundle = if manifest_path.exists() {
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let b: BundleManifest = toml::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
        if b.config_hash != hash {
            return Err(Error::Domain(format!(
                "{} holds a bundle for a different experiment (config hash {})",
                out.display(),
                b.config_hash
            )));
        }
        b
    } else {
        BundleManifest {
            format_version: BUNDLE_FORMAT_VERSION,
            name: spec.name.clone(),
            seed: spec.seed,
            config_hash: hash,
            spec_file: "experiment.toml".into(),
            ..Default::default()
        }
    };
    write(&out.join("experiment.toml"), &spec_text)?;

    let ds_path = out.join("dataset.toml");
    let synth_files = ["dataset.toml", "dataset.bin", "truth.grid"];
    let (dataset, truth) = if bundle.stage_done(out, "synth", &synth_files) {
        (read_dataset(&ds_path)?.0, load_grid(&out.join("truth.grid"))?)
    } else {
        let (ds, manifest) = synth(spec, &ds_path)?;
        let truth = truth_grid(&manifest, &spec.inverse_grid)?;
        save_grid(&truth, &out.join("truth.grid"))?;
        bundle.record(out, "synth", &synth_files.map(String::from))?;
        (ds, truth)
    };

    let n_train = dataset.split.train.len();
    let mut recons = Vec::new();
    for &method in &spec.methods {
        let key = method.key();
        let recon_rel = format!("{key}/recon.grid");
        let recon = if bundle.stage_done(out, key, &[recon_rel.as_str()]) {
            load_grid(&out.join(&recon_rel))?
        } else {
            let files: Vec<String> = match method {
                Method::Ls => {
                    invert(&dataset, spec, &out.join(&recon_rel))?;
                    vec![recon_rel.clone()]
                }
                _ => {
                    train(&dataset, spec, method, &out.join(key))?;
                    ["best.ckpt", "final.ckpt", "loss.csv", "train.json", "recon.grid"]
                        .iter()
                        .map(|f| format!("{key}/{f}"))
                        .collect()
                }
            };
            bundle.record(out, key, &files)?;
            load_grid(&out.join(&recon_rel))?
        };
        recons.push((method, recon));
    }

    let mut reports = Vec::new();
    for (method, recon) in &recons {
        reports.push(metrics::evaluate(&method.model_name(n_train), recon, &truth, &dataset, spec.threshold)?);
    }
    write(&out.join("metrics.csv"), MetricsReport::csv(&reports))?;
    let json: Vec<serde_json::Value> =
        reports.iter().map(|r| serde_json::to_value(r).expect("report serializes")).collect();
    write(&out.join("metrics.json"), serde_json::to_string_pretty(&json).expect("json"))?;
    bundle.record(out, "eval", &["metrics.csv".into(), "metrics.json".into()])?;

    let mut rendered = Vec::new();
    for (name, grid) in std::iter::once(("truth", &truth)).chain(recons.iter().map(|(m, g)| (m.key(), g))) {
        for p in render_slices(grid, Axis::Z, &out.join("render").join(name))? {
            rendered.push(p.strip_prefix(out).expect("inside bundle").to_string_lossy().into_owned());
        }
    }
    bundle.record(out, "render", &rendered)?;

    Ok(RunResult {
        dir: out.to_path_buf(),
        truth,
        recons,
        reports,
    })
}
