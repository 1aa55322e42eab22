//! Model checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes          | content                                    |
//! |----------------|--------------------------------------------|
//! | 8              | magic `RFMLPCKP`                            |
//! | 4              | format version (`u32`, currently 1)        |
//! | 4              | header length `h` (`u32`)                  |
//! | h              | JSON header: the `ActivationConfig`        |
//! | 8              | parameter count `n` (`u64`)                |
//! | 8 n            | parameters as `f64`                        |
//! | 32             | SHA-256 of every preceding byte            |

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ActivationConfig, MlpParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RFMLPCKP";
const VERSION: u32 = 1;

pub fn write_checkpoint(params: &MlpParams, mut w: impl Write) -> Result<()> {
    let header = serde_json::to_vec(params.config()).expect("config serializes");
    let mut buf = Vec::with_capacity(64 + header.len() + 8 * params.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    w.write_all(&buf).map_err(|e| Error::io("<checkpoint>", e))
}

pub fn read_checkpoint(mut r: impl Read, origin: &Path) -> Result<MlpParams> {
    let bad = |m: &str| Error::format(origin, m.to_string());
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io(origin, e))?;
    if buf.len() < 8 + 4 + 4 + 8 + 32 || &buf[..8] != MAGIC {
        return Err(bad("not a model checkpoint"));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum(origin.to_path_buf()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let h = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
    let header = body.get(16..16 + h).ok_or_else(|| bad("truncated header"))?;
    let config: ActivationConfig =
        serde_json::from_slice(header).map_err(|e| bad(&format!("bad header: {e}")))?;
    let rest = &body[16 + h..];
    if rest.len() < 8 {
        return Err(bad("truncated parameter count"));
    }
    let n = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
    let blob = &rest[8..];
    if blob.len() != 8 * n {
        return Err(bad("parameter blob length does not match count"));
    }
    let values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MlpParams::from_values(config, values)
}

pub fn save_checkpoint(params: &MlpParams, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(params, std::io::BufWriter::new(f)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<MlpParams> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f), path)
}
