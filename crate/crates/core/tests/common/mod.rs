//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radarfield::geometry::{full_azimuth_range, RadarConfig, FULL_ELEVATION_RANGE};
use radarfield::grt::GrtContext;
use radarfield::harness::{preset, ExperimentSpec, Method, Preset};
use radarfield::scene::GridSpec;

pub fn small_radar() -> RadarConfig {
    RadarConfig { n_freq: 4, n_tx: 2, n_rx: 2, ..Default::default() }
}

pub fn random_values(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stacked normalized operator of a context as a dense matrix, built column
/// by column.
pub fn dense(ctx: &GrtContext) -> DMatrix<Complex64> {
    let nv = ctx.spec.len();
    let rows = ctx.len() * ctx.config().signal_len();
    let mut m = DMatrix::zeros(rows, nv);
    for j in 0..nv {
        let mut e = vec![Complex64::new(0.0, 0.0); nv];
        e[j] = Complex64::new(1.0, 0.0);
        let col: Vec<Complex64> = (0..ctx.len()).flat_map(|k| ctx.apply(k, &e).unwrap().values).collect();
        for (i, v) in col.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

/// A cube experiment small enough to run every stage in about a second.
pub fn tiny_spec(seed: u64) -> ExperimentSpec {
    let mut s = preset("cube", Preset::Desk, seed).unwrap();
    s.name = "cube-tiny".into();
    s.forward_grid = GridSpec::with_count(10.0, 10).unwrap();
    s.inverse_grid = GridSpec::with_count(10.0, 5).unwrap();
    s.radar = small_radar();
    s.viewpoints.n_az = 5;
    s.viewpoints.n_el = 5;
    s.viewpoints.az_range = full_azimuth_range(5);
    s.viewpoints.el_range = FULL_ELEVATION_RANGE;
    s.viewpoints.n_train = 8;
    s.viewpoints.n_test = 4;
    s.train.epochs = 3;
    s.train.halve_every = 2;
    s.train.hidden_width = 8;
    s.train.depth = 2;
    s.kaczmarz.iterations = 3;
    s.methods = vec![Method::RiftN, Method::RiftS, Method::Ls];
    s.validate().unwrap();
    s
}

pub fn cli(args: &[&str], threads: usize) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radarfield"))
        .args(args)
        .env("RAYON_NUM_THREADS", threads.to_string())
        .output()
        .expect("binary runs")
}

/// Relative paths and contents of every file below `dir`, sorted.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
