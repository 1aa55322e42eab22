//! On-disk formats for datasets and voxel grids.
//!
//! A dataset is a TOML manifest plus a binary payload next to it. The payload
//! holds every signal as little-endian `f32` pairs `(re, im)`, viewpoint-major,
//! then frequency, TX and RX. Signals are stored in single precision, so
//! [`write_dataset`] followed by [`read_dataset`] reproduces the
//! [`quantize`]d dataset bit for bit.
//!
//! A grid file is binary (little-endian):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 8     | magic `RFVOXGRD`                          |
//! | 4     | format version (`u32`, currently 1)       |
//! | 8     | extent (`f64`)                            |
//! | 8     | granularity (`f64`)                       |
//! | 8     | voxels per axis `n` (`u64`)               |
//! | 16 n³ | values as `(re, im)` `f64` pairs, z fastest |
//! | 32    | SHA-256 of every preceding byte           |

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::experiment::SceneSpec;
use crate::error::{Error, Result};
use crate::geometry::{RadarConfig, Viewpoint};
use crate::grt::{Dataset, SignalTensor, Split};
use crate::scene::{GridSpec, VoxelGrid};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const GRID_FORMAT_VERSION: u32 = 1;
const GRID_MAGIC: &[u8; 8] = b"RFVOXGRD";

/// Ground-truth scene a dataset was synthesized from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub scene: SceneSpec,
    pub forward_grid: GridSpec,
    /// Reconstruction grid the dataset was prepared for.
    pub inverse_grid: GridSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Payload file name, relative to the manifest's directory.
    pub payload: String,
    pub payload_bytes: u64,
    pub payload_sha256: String,
    pub scale: f64,
    pub n_viewpoints: usize,
    /// `[n_freq, n_tx, n_rx]`
    pub signal_shape: [usize; 3],
    pub radar: RadarConfig,
    pub split: Split,
    pub scene: Option<SceneInfo>,
    pub viewpoints: Vec<Viewpoint>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Rounds every signal value to single precision.
pub fn quantize(dataset: &Dataset) -> Dataset {
    let mut out = dataset.clone();
    for s in &mut out.signals {
        for v in &mut s.values {
            *v = Complex64::new(v.re as f32 as f64, v.im as f32 as f64);
        }
    }
    out
}

fn payload_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.toml` (the manifest at `manifest_path`) and `<stem>.bin`.
pub fn write_dataset(dataset: &Dataset, scene: Option<SceneInfo>, manifest_path: &Path) -> Result<DatasetManifest> {
    dataset.split.validate(dataset.len())?;
    let shape = [dataset.config.n_freq, dataset.config.n_tx, dataset.config.n_rx];
    let per = dataset.config.signal_len();
    let mut payload = Vec::with_capacity(dataset.len() * per * 8);
    for s in &dataset.signals {
        if s.values.len() != per {
            return Err(Error::Shape(format!("signal of length {} in a dataset of {per}", s.values.len())));
        }
        for v in &s.values {
            payload.extend_from_slice(&(v.re as f32).to_le_bytes());
            payload.extend_from_slice(&(v.im as f32).to_le_bytes());
        }
    }
    let bin = payload_path(manifest_path);
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        payload: bin.file_name().unwrap().to_string_lossy().into_owned(),
        payload_bytes: payload.len() as u64,
        payload_sha256: sha256_hex(&payload),
        scale: dataset.scale,
        n_viewpoints: dataset.len(),
        signal_shape: shape,
        radar: dataset.config,
        split: dataset.split.clone(),
        scene,
        viewpoints: dataset.viewpoints.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::format(manifest_path, e.to_string()))?;
    write_file(&bin, &payload)?;
    write_file(manifest_path, text.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(manifest_path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: DatasetManifest = toml::from_str(&text).map_err(|e| Error::format(manifest_path, e.to_string()))?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::format(manifest_path, format!("unsupported dataset version {}", m.format_version)));
    }
    Ok(m)
}

pub fn read_dataset(manifest_path: &Path) -> Result<(Dataset, DatasetManifest)> {
    let m = read_manifest(manifest_path)?;
    let bin = manifest_path.parent().unwrap_or(Path::new("")).join(&m.payload);
    let payload = read_file(&bin)?;
    if sha256_hex(&payload) != m.payload_sha256 {
        return Err(Error::Checksum(bin));
    }
    m.radar.validate()?;
    let shape = [m.radar.n_freq, m.radar.n_tx, m.radar.n_rx];
    let per = m.radar.signal_len();
    let expected = m.n_viewpoints * per * 8;
    if shape != m.signal_shape || m.viewpoints.len() != m.n_viewpoints || payload.len() != expected {
        return Err(Error::format(
            manifest_path,
            format!("payload is {} bytes, manifest implies {expected}", payload.len()),
        ));
    }
    let values: Vec<Complex64> = payload
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..].try_into().unwrap());
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    let signals = values
        .chunks_exact(per.max(1))
        .map(|c| SignalTensor::from_values(&m.radar, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    for vp in &m.viewpoints {
        Viewpoint::new(vp.theta, vp.phi)?;
    }
    if !(m.scale > 0.0 && m.scale.is_finite()) {
        return Err(Error::format(manifest_path, format!("invalid scale {}", m.scale)));
    }
    let ds = Dataset {
        config: m.radar,
        viewpoints: m.viewpoints.clone(),
        signals,
        scale: m.scale,
        split: Split::default(),
    }
    .with_split(m.split.clone())?;
    Ok((ds, m))
}

pub fn grid_bytes(grid: &VoxelGrid) -> Vec<u8> {
    let mut buf = Vec::with_capacity(68 + 16 * grid.values.len());
    buf.extend_from_slice(GRID_MAGIC);
    buf.extend_from_slice(&GRID_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&grid.spec.extent.to_le_bytes());
    buf.extend_from_slice(&grid.spec.granularity.to_le_bytes());
    buf.extend_from_slice(&(grid.spec.n as u64).to_le_bytes());
    for v in &grid.values {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub fn grid_from_bytes(buf: &[u8], origin: &Path) -> Result<VoxelGrid> {
    let bad = |m: String| Error::format(origin, m);
    if buf.len() < 36 + 32 || &buf[..8] != GRID_MAGIC {
        return Err(bad("not a voxel grid file".into()));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum(origin.to_path_buf()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != GRID_FORMAT_VERSION {
        return Err(bad(format!("unsupported grid version {version}")));
    }
    let f = |a: usize| f64::from_le_bytes(body[a..a + 8].try_into().unwrap());
    let (extent, granularity) = (f(12), f(20));
    let n = u64::from_le_bytes(body[28..36].try_into().unwrap()) as usize;
    let data = &body[36..];
    if n == 0 || data.len() != n.pow(3) * 16 {
        return Err(bad(format!("{} value bytes for n = {n}", data.len())));
    }
    let check = GridSpec::with_count(extent, n)?;
    if (check.granularity - granularity).abs() > 1e-9 * granularity {
        return Err(bad(format!("granularity {granularity} inconsistent with extent {extent} / {n}")));
    }
    let spec = GridSpec { extent, granularity, n };
    let values = data
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    VoxelGrid::new(spec, values)
}

pub fn save_grid(grid: &VoxelGrid, path: &Path) -> Result<()> {
    write_file(path, &grid_bytes(grid))
}

pub fn load_grid(path: &Path) -> Result<VoxelGrid> {
    grid_from_bytes(&read_file(path)?, path)
}
