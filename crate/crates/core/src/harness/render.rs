//! Magnitude slices as binary PGM (`P5`) images.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::VoxelGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            _ => Err(Error::Domain(format!("unknown axis {s:?}, expected x, y or z"))),
        }
    }
}

/// Pixel `(row, col)` of slice `k` maps to the voxel whose two remaining axes
/// (in x, y, z order) are `row` and `col`.
fn voxel_index(grid: &VoxelGrid, axis: Axis, k: usize, row: usize, col: usize) -> usize {
    let s = &grid.spec;
    match axis {
        Axis::X => s.index(k, row, col),
        Axis::Y => s.index(row, k, col),
        Axis::Z => s.index(row, col, k),
    }
}

/// Slice `k` as a PGM image; magnitudes are divided by `max` and mapped to
/// `0..=255`. A zero `max` gives a black image.
pub fn slice_pgm(grid: &VoxelGrid, axis: Axis, k: usize, max: f64) -> Vec<u8> {
    let n = grid.spec.n;
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    for row in 0..n {
        for col in 0..n {
            let m = grid.values[voxel_index(grid, axis, k, row, col)].norm();
            let px = if max > 0.0 { (255.0 * m / max).round().clamp(0.0, 255.0) as u8 } else { 0 };
            out.push(px);
        }
    }
    out
}

/// Writes `slice_XXX.pgm` for every slice along `axis`, all sharing the
/// grid's maximum magnitude as white.
pub fn render_slices(grid: &VoxelGrid, axis: Axis, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let max = grid.max_magnitude();
    let width = grid.spec.n.to_string().len().max(3);
    (0..grid.spec.n)
        .map(|k| {
            let path = out_dir.join(format!("slice_{k:0width$}.pgm"));
            std::fs::write(&path, slice_pgm(grid, axis, k, max)).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
