//! Python bindings for `radarfield`.
//!
//! Complex arrays cross the boundary as flat lists of Python `complex`;
//! grids are stored x-major, z fastest, and signals `[freq][tx][rx]`.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use radarfield::geometry::{self, FieldRegime};
use radarfield::grt::{self, SignalTensor, Split};
use radarfield::harness::{self, ExperimentSpec, Preset};
use radarfield::inr::{self, ActivationConfig};
use radarfield::kaczmarz::{self, KaczmarzConfig};
use radarfield::metrics::{self, MetricsReport};
use radarfield::optimizer::{self, TrainConfig};
use radarfield::scene::{self, Composite, ShapeKind, ShapeSpec};
use radarfield::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Divergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for radarfield::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyclass(name = "GridSpec", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyGridSpec(scene::GridSpec);

#[pymethods]
impl PyGridSpec {
    /// Cube of edge `extent` meters with `n` voxels per axis.
    #[new]
    fn new(extent: f64, n: usize) -> PyResult<Self> {
        scene::GridSpec::with_count(extent, n).py().map(Self)
    }

    #[staticmethod]
    fn from_granularity(extent: f64, granularity: f64) -> PyResult<Self> {
        scene::GridSpec::new(extent, granularity).py().map(Self)
    }

    #[getter]
    fn extent(&self) -> f64 {
        self.0.extent
    }

    #[getter]
    fn granularity(&self) -> f64 {
        self.0.granularity
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn center(&self, index: usize) -> PyResult<(f64, f64, f64)> {
        if index >= self.0.len() {
            return Err(PyValueError::new_err("voxel index out of range"));
        }
        let c = self.0.center(index);
        Ok((c[0], c[1], c[2]))
    }

    fn __repr__(&self) -> String {
        format!("GridSpec(extent={}, n={})", self.0.extent, self.0.n)
    }
}

#[pyclass(name = "VoxelGrid", skip_from_py_object)]
#[derive(Clone)]
struct PyVoxelGrid(scene::VoxelGrid);

#[pymethods]
impl PyVoxelGrid {
    #[new]
    fn new(spec: &PyGridSpec, values: Vec<Complex64>) -> PyResult<Self> {
        scene::VoxelGrid::new(spec.0, values).py().map(Self)
    }

    #[staticmethod]
    fn zeros(spec: &PyGridSpec) -> Self {
        Self(scene::VoxelGrid::zeros(spec.0))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        harness::load_grid(&path).py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        harness::save_grid(&self.0, &path).py()
    }

    #[getter]
    fn spec(&self) -> PyGridSpec {
        PyGridSpec(self.0.spec)
    }

    fn values(&self) -> Vec<Complex64> {
        self.0.values.clone()
    }

    fn magnitudes(&self) -> Vec<f64> {
        self.0.magnitudes()
    }

    fn max_magnitude(&self) -> f64 {
        self.0.max_magnitude()
    }

    /// `(ix, iy, iz)` of the largest-magnitude voxel.
    fn argmax(&self) -> (usize, usize, usize) {
        let [x, y, z] = self.0.spec.unravel(self.0.argmax_magnitude());
        (x, y, z)
    }

    fn get(&self, ix: usize, iy: usize, iz: usize) -> PyResult<Complex64> {
        let n = self.0.spec.n;
        if ix >= n || iy >= n || iz >= n {
            return Err(PyValueError::new_err("voxel index out of range"));
        }
        Ok(self.0.get(ix, iy, iz))
    }

    fn resample(&self, target: &PyGridSpec) -> PyResult<Self> {
        scene::resample(&self.0, &target.0).py().map(Self)
    }

    fn __repr__(&self) -> String {
        format!("VoxelGrid(extent={}, n={})", self.0.spec.extent, self.0.spec.n)
    }
}

/// Voxelizes a shape centered at `center`: `kind` is "sphere" (dims = [radius]),
/// "cube" ([edge]), "pyramid" ([base_x, base_y, height]) or "box" ([dx, dy, dz]).
#[pyfunction]
#[pyo3(signature = (kind, dims, spec, center = (0.0, 0.0, 0.0), reflectivity = Complex64::new(1.0, 0.0)))]
fn primitive(
    kind: &str,
    dims: Vec<f64>,
    spec: &PyGridSpec,
    center: (f64, f64, f64),
    reflectivity: Complex64,
) -> PyResult<PyVoxelGrid> {
    let need = |k: usize| {
        if dims.len() == k {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!("{kind} needs {k} dimensions")))
        }
    };
    let kind = match kind {
        "sphere" => {
            need(1)?;
            ShapeKind::Sphere { radius: dims[0] }
        }
        "cube" => {
            need(1)?;
            ShapeKind::Cube { edge: dims[0] }
        }
        "pyramid" => {
            need(3)?;
            ShapeKind::Pyramid {
                base_x: dims[0],
                base_y: dims[1],
                height: dims[2],
            }
        }
        "box" => {
            need(3)?;
            ShapeKind::Box {
                dims: [dims[0], dims[1], dims[2]],
            }
        }
        other => return Err(PyValueError::new_err(format!("unknown shape {other:?}"))),
    };
    let shape = ShapeSpec {
        kind,
        center: [center.0, center.1, center.2],
        reflectivity,
    };
    scene::generate_primitive(&shape, &spec.0).py().map(PyVoxelGrid)
}

/// Built-in composite scene: "parking_lot", "highway" or "wtd_bars".
#[pyfunction]
#[pyo3(signature = (name, spec, ratio = 0.25))]
fn composite(name: &str, spec: &PyGridSpec, ratio: f64) -> PyResult<PyVoxelGrid> {
    let c = match name {
        "parking_lot" => Composite::ParkingLot,
        "highway" => Composite::Highway,
        "wtd_bars" => Composite::WtdBars { ratio },
        other => return Err(PyValueError::new_err(format!("unknown scene {other:?}"))),
    };
    scene::generate_composite(c, &spec.0).py().map(PyVoxelGrid)
}

#[pyclass(name = "RadarConfig", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyRadarConfig(geometry::RadarConfig);

#[pymethods]
impl PyRadarConfig {
    #[new]
    #[pyo3(signature = (n_freq = 100, n_tx = 16, n_rx = 16, f_lo = 95e9, f_hi = 105e9,
                        standoff_radius = 10.0, far_field = false,
                        antenna_spacing = geometry::DEFAULT_ANTENNA_SPACING))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n_freq: usize,
        n_tx: usize,
        n_rx: usize,
        f_lo: f64,
        f_hi: f64,
        standoff_radius: f64,
        far_field: bool,
        antenna_spacing: f64,
    ) -> PyResult<Self> {
        let c = geometry::RadarConfig {
            n_freq,
            f_lo,
            f_hi,
            n_tx,
            n_rx,
            antenna_spacing,
            standoff_radius,
            field_regime: if far_field { FieldRegime::FarField } else { FieldRegime::NearField },
        };
        c.validate().py()?;
        Ok(Self(c))
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.n_freq, self.0.n_tx, self.0.n_rx)
    }

    fn frequencies(&self) -> PyResult<Vec<f64>> {
        geometry::frequency_grid(&self.0).py()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

#[pyclass(name = "Viewpoint", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyViewpoint(geometry::Viewpoint);

#[pymethods]
impl PyViewpoint {
    #[new]
    fn new(theta: f64, phi: f64) -> PyResult<Self> {
        geometry::Viewpoint::new(theta, phi).py().map(Self)
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta
    }

    #[getter]
    fn phi(&self) -> f64 {
        self.0.phi
    }

    fn __repr__(&self) -> String {
        format!("Viewpoint(theta={}, phi={})", self.0.theta, self.0.phi)
    }
}

#[pyfunction]
fn wavenumber(f: f64) -> PyResult<f64> {
    geometry::wavenumber(f).py()
}

#[pyfunction]
fn viewpoint_grid(n_az: usize, n_el: usize, az_range: [f64; 2], el_range: [f64; 2]) -> PyResult<Vec<PyViewpoint>> {
    geometry::viewpoint_grid(n_az, n_el, az_range, el_range)
        .py()
        .map(|v| v.into_iter().map(PyViewpoint).collect())
}

/// Unnormalized signal of `grid` seen from `vp`, flattened `[freq][tx][rx]`.
#[pyfunction]
fn forward(grid: &PyVoxelGrid, vp: &PyViewpoint, radar: &PyRadarConfig) -> PyResult<Vec<Complex64>> {
    grt::forward(&grid.0, &vp.0, &radar.0).py().map(|s| s.values)
}

/// Adjoint of `forward` applied to a flattened signal.
#[pyfunction]
fn adjoint(signal: Vec<Complex64>, vp: &PyViewpoint, radar: &PyRadarConfig, spec: &PyGridSpec) -> PyResult<PyVoxelGrid> {
    let s = SignalTensor::from_values(&radar.0, signal).py()?;
    grt::adjoint(&s, &vp.0, &radar.0, &spec.0).py().map(PyVoxelGrid)
}

#[pyclass(name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset(grt::Dataset);

#[pymethods]
impl PyDataset {
    /// Synthesizes normalized signals for every viewpoint and draws a seeded
    /// train/test split.
    #[staticmethod]
    #[pyo3(signature = (grid, viewpoints, radar, n_train, n_test, seed = 0))]
    fn synthesize(
        grid: &PyVoxelGrid,
        viewpoints: Vec<PyViewpoint>,
        radar: &PyRadarConfig,
        n_train: usize,
        n_test: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let vps: Vec<_> = viewpoints.iter().map(|v| v.0).collect();
        let split = Split::sample(vps.len(), n_train, n_test, seed).py()?;
        let ds = grt::forward_dataset(&grid.0, &vps, &radar.0).py()?.with_split(split).py()?;
        Ok(Self(ds))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        harness::read_dataset(&path).py().map(|(d, _)| Self(d))
    }

    /// Writes the manifest to `path` and the payload next to it (single precision).
    fn save(&self, path: PathBuf) -> PyResult<()> {
        harness::write_dataset(&self.0, None, &path).py().map(|_| ())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.0.scale
    }

    #[getter]
    fn train(&self) -> Vec<usize> {
        self.0.split.train.clone()
    }

    #[getter]
    fn test(&self) -> Vec<usize> {
        self.0.split.test.clone()
    }

    #[getter]
    fn radar(&self) -> PyRadarConfig {
        PyRadarConfig(self.0.config)
    }

    fn viewpoint(&self, i: usize) -> PyResult<PyViewpoint> {
        self.0
            .viewpoints
            .get(i)
            .map(|v| PyViewpoint(*v))
            .ok_or_else(|| PyValueError::new_err("viewpoint index out of range"))
    }

    /// Normalized signal of viewpoint `i`, flattened `[freq][tx][rx]`.
    fn signal(&self, i: usize) -> PyResult<Vec<Complex64>> {
        self.0
            .signals
            .get(i)
            .map(|s| s.values.clone())
            .ok_or_else(|| PyValueError::new_err("viewpoint index out of range"))
    }
}

/// Block Kaczmarz least squares on the training split.
#[pyfunction]
#[pyo3(signature = (dataset, spec, iterations = 100, relaxation = 1.0, seed = 0))]
fn kaczmarz_solve(dataset: &PyDataset, spec: &PyGridSpec, iterations: usize, relaxation: f64, seed: u64) -> PyResult<PyVoxelGrid> {
    let cfg = KaczmarzConfig {
        iterations,
        relaxation,
        seed,
        ..Default::default()
    };
    kaczmarz::solve(&dataset.0, &spec.0, &cfg).py().map(PyVoxelGrid)
}

/// Trains a RIFT model on the training split. Returns the best model rendered
/// on `spec` and the per-epoch mean loss.
#[pyfunction]
#[pyo3(signature = (dataset, spec, variant = "N", epochs = 100, lr = 1e-2, halve_every = 100,
                    w_phase = 5000.0, seed = 0, hidden_width = 64, depth = 4))]
#[allow(clippy::too_many_arguments)]
fn train_rift(
    py: Python<'_>,
    dataset: &PyDataset,
    spec: &PyGridSpec,
    variant: &str,
    epochs: usize,
    lr: f64,
    halve_every: usize,
    w_phase: f64,
    seed: u64,
    hidden_width: usize,
    depth: usize,
) -> PyResult<(PyVoxelGrid, Vec<f64>)> {
    let variant = match variant {
        "N" | "n" => inr::Variant::N,
        "S" | "s" => inr::Variant::S,
        other => return Err(PyValueError::new_err(format!("unknown variant {other:?}"))),
    };
    let act = ActivationConfig {
        hidden_width,
        depth,
        half_extent: spec.0.half_extent(),
        ..ActivationConfig::new(variant)
    };
    let mut cfg = TrainConfig {
        epochs,
        lr,
        halve_every,
        seed,
        ..TrainConfig::new(spec.0)
    };
    cfg.loss.w_phase = w_phase;
    let ds = &dataset.0;
    let spec = spec.0;
    let (grid, losses) = py
        .detach(|| -> radarfield::Result<_> {
            let model = inr::init(act, seed)?;
            let ctx = optimizer::training_context(ds, &spec)?;
            let rep = optimizer::train(ds, model, &ctx, &cfg)?;
            let grid = inr::render(&rep.best_params, &spec)?;
            Ok((grid, rep.history.iter().map(|l| l.total).collect()))
        })
        .py()?;
    Ok((PyVoxelGrid(grid), losses))
}

#[pyfunction]
fn m_ssim(recon: &PyVoxelGrid, truth: &PyVoxelGrid) -> PyResult<f64> {
    metrics::m_ssim(&recon.0, &truth.0).py()
}

#[pyfunction]
fn m_cos(recon: &PyVoxelGrid, truth: &PyVoxelGrid) -> PyResult<f64> {
    metrics::m_cos(&recon.0, &truth.0).py()
}

#[pyfunction]
#[pyo3(signature = (recon, truth, threshold = metrics::DEFAULT_THRESHOLD))]
fn t_iou(recon: &PyVoxelGrid, truth: &PyVoxelGrid, threshold: f64) -> PyResult<f64> {
    metrics::t_iou(&recon.0, &truth.0, threshold).py()
}

/// Wrapped phase RMSE between two equally long flat signal lists.
#[pyfunction]
fn p_rmse(pred: Vec<Complex64>, truth: Vec<Complex64>) -> PyResult<f64> {
    let n = pred.len();
    let cfg = geometry::RadarConfig {
        n_freq: n.max(1),
        n_tx: 1,
        n_rx: 1,
        ..Default::default()
    };
    let a = SignalTensor::from_values(&cfg, pred).py()?;
    let b = SignalTensor::from_values(&cfg, truth).map_err(|_| PyValueError::new_err("length mismatch"))?;
    metrics::p_rmse(&[a], &[b]).py()
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("model", &r.model)?;
    d.set_item("m-SSIM", r.m_ssim)?;
    d.set_item("m-COS", r.m_cos)?;
    d.set_item("t-IoU", r.t_iou)?;
    d.set_item("p-RMSE", r.p_rmse)?;
    d.set_item("threshold", r.threshold)?;
    d.set_item("slice_axis", &r.slice_axis)?;
    d.set_item("test_viewpoints", r.test_viewpoints)?;
    Ok(d)
}

/// All four metrics as a dict keyed by the table column names.
#[pyfunction]
#[pyo3(signature = (model, recon, truth, dataset, threshold = metrics::DEFAULT_THRESHOLD))]
fn evaluate<'py>(
    py: Python<'py>,
    model: &str,
    recon: &PyVoxelGrid,
    truth: &PyVoxelGrid,
    dataset: &PyDataset,
    threshold: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = metrics::evaluate(model, &recon.0, &truth.0, &dataset.0, threshold).py()?;
    report_dict(py, &r)
}

/// Built-in experiment spec as TOML text. `scale` is "desk" or "paper".
#[pyfunction]
#[pyo3(signature = (name, scale = "desk", seed = 0))]
fn preset(name: &str, scale: &str, seed: u64) -> PyResult<String> {
    let scale: Preset = scale.parse().py()?;
    harness::preset(name, scale, seed).py().map(|s| s.to_toml())
}

/// Runs a full experiment from TOML spec text into the bundle directory
/// `out` and returns the metric rows.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, spec: &str, out: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let spec = ExperimentSpec::from_toml(spec).py()?;
    let result = py.detach(|| harness::run(&spec, &out)).py()?;
    result.reports.iter().map(|r| report_dict(py, r)).collect()
}

#[pymodule]
pub fn radarfield_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGridSpec>()?;
    m.add_class::<PyVoxelGrid>()?;
    m.add_class::<PyRadarConfig>()?;
    m.add_class::<PyViewpoint>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(primitive, m)?)?;
    m.add_function(wrap_pyfunction!(composite, m)?)?;
    m.add_function(wrap_pyfunction!(wavenumber, m)?)?;
    m.add_function(wrap_pyfunction!(viewpoint_grid, m)?)?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(adjoint, m)?)?;
    m.add_function(wrap_pyfunction!(kaczmarz_solve, m)?)?;
    m.add_function(wrap_pyfunction!(train_rift, m)?)?;
    m.add_function(wrap_pyfunction!(m_ssim, m)?)?;
    m.add_function(wrap_pyfunction!(m_cos, m)?)?;
    m.add_function(wrap_pyfunction!(t_iou, m)?)?;
    m.add_function(wrap_pyfunction!(p_rmse, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
