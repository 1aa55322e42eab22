//! Voxelized reflectivity scenes.
//!
//! Grids are cubes centered on the origin. Voxel values live at voxel centers
//! and are stored x-major: `index = (ix * n + iy) * n + iz`.

mod catalog;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub use catalog::{BoxSpec, CompositeScene, SceneCatalog, DEFAULT_CATALOG};

const EXTENT_RTOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Full edge length of the cube, meters.
    pub extent: f64,
    /// Voxel pitch, meters.
    pub granularity: f64,
    /// Voxels per axis.
    pub n: usize,
}

impl GridSpec {
    pub fn new(extent: f64, granularity: f64) -> Result<Self> {
        if !(extent > 0.0) || !(granularity > 0.0) || !extent.is_finite() {
            return Err(Error::Domain(format!(
                "grid extent ({extent}) and granularity ({granularity}) must be positive"
            )));
        }
        let n = (extent / granularity).round();
        if n < 1.0 || (n * granularity - extent).abs() > EXTENT_RTOL * extent {
            return Err(Error::Domain(format!(
                "granularity {granularity} does not tile extent {extent}"
            )));
        }
        Ok(Self {
            extent,
            granularity,
            n: n as usize,
        })
    }

    pub fn with_count(extent: f64, n: usize) -> Result<Self> {
        if !(extent > 0.0) || n == 0 {
            return Err(Error::Domain(format!("invalid grid: extent {extent}, n {n}")));
        }
        Ok(Self {
            extent,
            granularity: extent / n as f64,
            n,
        })
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn half_extent(&self) -> f64 {
        0.5 * self.extent
    }

    pub fn voxel_volume(&self) -> f64 {
        self.granularity.powi(3)
    }

    #[inline]
    pub fn axis_coord(&self, i: usize) -> f64 {
        -0.5 * self.extent + (i as f64 + 0.5) * self.granularity
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n + iy) * self.n + iz
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    #[inline]
    pub fn center(&self, idx: usize) -> Vec3 {
        let [ix, iy, iz] = self.unravel(idx);
        [self.axis_coord(ix), self.axis_coord(iy), self.axis_coord(iz)]
    }

    pub fn same_extent(&self, other: &GridSpec) -> bool {
        (self.extent - other.extent).abs() <= EXTENT_RTOL * self.extent.max(other.extent)
    }

    fn contains_box(&self, lo: Vec3, hi: Vec3) -> bool {
        let h = self.half_extent() * (1.0 + EXTENT_RTOL);
        (0..3).all(|a| lo[a] >= -h && hi[a] <= h)
    }
}

/// Voxel centers in storage order.
pub fn voxel_centers(spec: &GridSpec) -> Vec<Vec3> {
    (0..spec.len()).map(|i| spec.center(i)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    pub values: Vec<Complex64>,
}

impl VoxelGrid {
    pub fn new(spec: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::Shape(format!(
                "grid of n = {} needs {} values, got {}",
                spec.n,
                spec.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "voxel grid".into(),
            });
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![Complex64::new(0.0, 0.0); spec.len()],
        }
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> Complex64 {
        self.values[self.spec.index(ix, iy, iz)]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Index of the largest-magnitude voxel; the first one wins ties.
    pub fn argmax_magnitude(&self) -> usize {
        let mut best = 0;
        let mut best_mag = f64::NEG_INFINITY;
        for (i, v) in self.values.iter().enumerate() {
            let m = v.norm();
            if m > best_mag {
                best = i;
                best_mag = m;
            }
        }
        best
    }

    pub fn mean(&self) -> Complex64 {
        self.values.iter().sum::<Complex64>() / self.values.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere { radius: f64 },
    Cube { edge: f64 },
    /// Square-based pyramid, apex above the base center.
    Pyramid { base_x: f64, base_y: f64, height: f64 },
    Box { dims: Vec3 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Center of the shape's bounding box, meters.
    pub center: Vec3,
    pub reflectivity: Complex64,
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind, center: Vec3) -> Self {
        Self {
            kind,
            center,
            reflectivity: Complex64::new(1.0, 0.0),
        }
    }

    fn half_dims(&self) -> Vec3 {
        match self.kind {
            ShapeKind::Sphere { radius } => [radius; 3],
            ShapeKind::Cube { edge } => [0.5 * edge; 3],
            ShapeKind::Pyramid {
                base_x,
                base_y,
                height,
            } => [0.5 * base_x, 0.5 * base_y, 0.5 * height],
            ShapeKind::Box { dims } => [0.5 * dims[0], 0.5 * dims[1], 0.5 * dims[2]],
        }
    }

    fn validate(&self) -> Result<()> {
        let h = self.half_dims();
        if h.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::Domain(format!("shape dimensions must be positive: {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let h = self.half_dims();
        let c = self.center;
        (
            [c[0] - h[0], c[1] - h[1], c[2] - h[2]],
            [c[0] + h[0], c[1] + h[1], c[2] + h[2]],
        )
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let d = [
            p[0] - self.center[0],
            p[1] - self.center[1],
            p[2] - self.center[2],
        ];
        match self.kind {
            ShapeKind::Sphere { radius } => {
                d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= radius * radius * (1.0 + 2.0 * MEMBERSHIP_TOL)
            }
            ShapeKind::Cube { .. } | ShapeKind::Box { .. } => {
                let h = self.half_dims();
                (0..3).all(|a| d[a].abs() <= h[a] * (1.0 + MEMBERSHIP_TOL))
            }
            ShapeKind::Pyramid {
                base_x,
                base_y,
                height,
            } => {
                let t = (d[2] + 0.5 * height) / height;
                if !(-MEMBERSHIP_TOL..=1.0 + MEMBERSHIP_TOL).contains(&t) {
                    return false;
                }
                let shrink = 1.0 - t + MEMBERSHIP_TOL;
                d[0].abs() <= 0.5 * base_x * shrink && d[1].abs() <= 0.5 * base_y * shrink
            }
        }
    }
}

fn check_fits(shape: &ShapeSpec, spec: &GridSpec) -> Result<()> {
    shape.validate()?;
    let (lo, hi) = shape.bounds();
    if !spec.contains_box(lo, hi) {
        return Err(Error::Geometry(format!(
            "shape {:?} at {:?} exceeds the grid half-extent {}",
            shape.kind,
            shape.center,
            spec.half_extent()
        )));
    }
    Ok(())
}

/// Relative slack on membership tests so that centers lying exactly on a
/// face are not lost to rounding in the center coordinates.
const MEMBERSHIP_TOL: f64 = 1e-9;

/// Rasterizes a solid by center-in-solid membership.
pub fn generate_primitive(shape: &ShapeSpec, spec: &GridSpec) -> Result<VoxelGrid> {
    check_fits(shape, spec)?;
    let mut grid = VoxelGrid::zeros(*spec);
    paint(&mut grid, shape);
    Ok(grid)
}

/// Overwrites voxels whose centers fall inside `shape`.
fn paint(grid: &mut VoxelGrid, shape: &ShapeSpec) {
    let spec = grid.spec;
    for (i, v) in grid.values.iter_mut().enumerate() {
        if shape.contains(spec.center(i)) {
            *v = shape.reflectivity;
        }
    }
}

/// Built-in composite scenes. `WtdBars(ratio)` is the weak-target pair with the
/// `+x` bar at reflectivity `ratio`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Composite {
    ParkingLot,
    Highway,
    WtdBars { ratio: f64 },
}

impl Composite {
    pub fn catalog_key(&self) -> &'static str {
        match self {
            Composite::ParkingLot => "parking_lot",
            Composite::Highway => "highway",
            Composite::WtdBars { .. } => "wtd_bars",
        }
    }
}

pub fn generate_composite(scene: Composite, spec: &GridSpec) -> Result<VoxelGrid> {
    generate_composite_from(&SceneCatalog::builtin(), scene, spec)
}

pub fn generate_composite_from(
    catalog: &SceneCatalog,
    scene: Composite,
    spec: &GridSpec,
) -> Result<VoxelGrid> {
    let weak = match scene {
        Composite::WtdBars { ratio } => {
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(Error::Domain(format!("weak-target ratio {ratio} outside (0, 1]")));
            }
            ratio
        }
        _ => 1.0,
    };
    let entry = catalog.get(scene.catalog_key())?;
    let shapes: Vec<ShapeSpec> = entry.boxes.iter().map(|b| b.to_shape(weak)).collect();
    for s in &shapes {
        check_fits(s, spec)?;
    }
    let mut grid = VoxelGrid::zeros(*spec);
    for s in &shapes {
        paint(&mut grid, s);
    }
    Ok(grid)
}

/// Box-mean downsampling onto a coarser grid of the same extent. Each source
/// voxel is assigned to the target cell containing its center, and every
/// target voxel becomes the mean of its assigned sources.
pub fn resample(grid: &VoxelGrid, target: &GridSpec) -> Result<VoxelGrid> {
    let src = grid.spec;
    if !src.same_extent(target) {
        return Err(Error::Shape(format!(
            "cannot resample extent {} onto extent {}",
            src.extent, target.extent
        )));
    }
    if target.n > src.n {
        return Err(Error::Shape(format!(
            "resample only coarsens: {} -> {}",
            src.n, target.n
        )));
    }
    // Center of source cell i lies in target cell floor((2i + 1) * nt / (2 n)).
    let cell: Vec<usize> = (0..src.n)
        .map(|i| ((2 * i + 1) * target.n) / (2 * src.n))
        .collect();
    let mut sums = vec![Complex64::new(0.0, 0.0); target.len()];
    let mut counts = vec![0usize; target.len()];
    for ix in 0..src.n {
        for iy in 0..src.n {
            for iz in 0..src.n {
                let t = target.index(cell[ix], cell[iy], cell[iz]);
                sums[t] += grid.get(ix, iy, iz);
                counts[t] += 1;
            }
        }
    }
    let values = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| s / c as f64)
        .collect();
    Ok(VoxelGrid {
        spec: *target,
        values,
    })
}
