//! Persistence and experiment orchestration behind the `radarfield` CLI.

pub mod commands;
pub mod experiment;
pub mod files;
pub mod render;

pub use commands::{eval, invert, run, synth, train, truth_grid, BundleManifest, RunResult, TrainSummary};
pub use experiment::{preset, ExperimentSpec, Method, Preset, SceneSpec, TrainSettings, ViewpointSampling, PRESET_EXPERIMENTS};
pub use files::{load_grid, quantize, read_dataset, read_manifest, save_grid, write_dataset, DatasetManifest, SceneInfo};
pub use render::{render_slices, Axis};
