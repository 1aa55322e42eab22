//! Experiment specifications and the built-in presets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{full_azimuth_range, viewpoint_grid, FieldRegime, RadarConfig, Viewpoint, FULL_ELEVATION_RANGE};
use crate::inr::{ActivationConfig, Variant};
use crate::kaczmarz::KaczmarzConfig;
use crate::optimizer::{LossWeights, TrainConfig};
use crate::scene::{generate_composite, generate_primitive, Composite, GridSpec, ShapeKind, ShapeSpec, VoxelGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSpec {
    Primitive(ShapeSpec),
    Composite(Composite),
}

impl SceneSpec {
    pub fn generate(&self, spec: &GridSpec) -> Result<VoxelGrid> {
        match self {
            SceneSpec::Primitive(s) => generate_primitive(s, spec),
            SceneSpec::Composite(c) => generate_composite(*c, spec),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RiftN,
    RiftS,
    Ls,
}

impl Method {
    pub fn variant(&self) -> Option<Variant> {
        match self {
            Method::RiftN => Some(Variant::N),
            Method::RiftS => Some(Variant::S),
            Method::Ls => None,
        }
    }

    /// Table row label, e.g. `RIFT(N)-100` or `LS-100`.
    pub fn model_name(&self, n_train: usize) -> String {
        match self {
            Method::RiftN => format!("RIFT(N)-{n_train}"),
            Method::RiftS => format!("RIFT(S)-{n_train}"),
            Method::Ls => format!("LS-{n_train}"),
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            Method::RiftN => "rift_n",
            Method::RiftS => "rift_s",
            Method::Ls => "ls",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "rift_n" | "n" => Ok(Method::RiftN),
            "rift_s" | "s" => Ok(Method::RiftS),
            "ls" | "kaczmarz" => Ok(Method::Ls),
            _ => Err(Error::Domain(format!("unknown method {s:?}, expected rift_n, rift_s or ls"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewpointSampling {
    pub n_az: usize,
    pub n_el: usize,
    pub az_range: [f64; 2],
    pub el_range: [f64; 2],
    pub n_train: usize,
    pub n_test: usize,
}

impl ViewpointSampling {
    pub fn grid(&self) -> Result<Vec<Viewpoint>> {
        viewpoint_grid(self.n_az, self.n_el, self.az_range, self.el_range)
    }
}

/// Optimizer and model settings shared by the RIFT methods.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub halve_every: usize,
    pub hidden_width: usize,
    pub depth: usize,
    #[serde(flatten)]
    pub loss: LossWeights,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 1e-2,
            weight_decay: 1e-2,
            halve_every: 100,
            hidden_width: 64,
            depth: 4,
            loss: LossWeights::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    /// Drives the viewpoint split, model initialization and Kaczmarz ordering.
    pub seed: u64,
    /// t-IoU threshold.
    pub threshold: f64,
    pub methods: Vec<Method>,
    pub scene: SceneSpec,
    pub forward_grid: GridSpec,
    pub inverse_grid: GridSpec,
    pub radar: RadarConfig,
    pub viewpoints: ViewpointSampling,
    pub train: TrainSettings,
    pub kaczmarz: KaczmarzConfig,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.radar.validate()?;
        if !self.forward_grid.same_extent(&self.inverse_grid) {
            return Err(Error::Domain("forward and inverse grids must share the scene extent".into()));
        }
        let n = self.viewpoints.n_az * self.viewpoints.n_el;
        if self.viewpoints.n_train + self.viewpoints.n_test > n {
            return Err(Error::Domain(format!(
                "{} train + {} test viewpoints exceed the {n}-point grid",
                self.viewpoints.n_train, self.viewpoints.n_test
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Domain("experiment needs at least one method".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Domain(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        self.train_config().validate()?;
        self.kaczmarz_config().validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Domain(format!("bad experiment spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// SHA-256 of the canonical TOML form.
    pub fn config_hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            lr: t.lr,
            weight_decay: t.weight_decay,
            halve_every: t.halve_every,
            loss: t.loss,
            seed: self.seed,
            ..TrainConfig::new(self.inverse_grid)
        }
    }

    pub fn activation_config(&self, variant: Variant) -> ActivationConfig {
        ActivationConfig {
            hidden_width: self.train.hidden_width,
            depth: self.train.depth,
            half_extent: self.inverse_grid.half_extent(),
            ..ActivationConfig::new(variant)
        }
    }

    pub fn kaczmarz_config(&self) -> KaczmarzConfig {
        KaczmarzConfig { seed: self.seed, ..self.kaczmarz }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Domain(format!("unknown preset {s:?}, expected desk or paper"))),
        }
    }
}

/// Experiments available as presets.
pub const PRESET_EXPERIMENTS: [&str; 6] = ["cube", "sphere", "pyramid", "parking_lot", "highway", "wtd"];

fn unit(kind: ShapeKind) -> SceneSpec {
    SceneSpec::Primitive(ShapeSpec::new(kind, [0.0; 3]))
}

/// Built-in experiment `name` at the given scale, seeded with `seed`.
///
/// Paper-scale runs synthesize 2601 viewpoints of 100 x 16 x 16 signals and
/// train for 500 epochs; expect several hours per experiment.
///
/// Desk runs use 10 frequencies, 4 x 4 antennas, 32^3 / 16^3 grids (16^3 for
/// both in the weak-target case), 200 training views for that case, 300
/// epochs and a phase weight of 1. With only 10 frequencies the phase term
/// is badly aliased and larger weights let it swamp the magnitude fit.
pub fn preset(name: &str, scale: Preset, seed: u64) -> Result<ExperimentSpec> {
    let grid = |extent: f64, n: usize| GridSpec::with_count(extent, n);
    let scene = match name {
        "cube" => unit(ShapeKind::Cube { edge: 2.0 }),
        "sphere" => unit(ShapeKind::Sphere { radius: 2.0 }),
        "pyramid" => unit(ShapeKind::Pyramid {
            base_x: 2.0,
            base_y: 2.0,
            height: 2.0,
        }),
        "parking_lot" => SceneSpec::Composite(Composite::ParkingLot),
        "highway" => SceneSpec::Composite(Composite::Highway),
        "wtd" => SceneSpec::Composite(Composite::WtdBars { ratio: 0.25 }),
        _ => {
            return Err(Error::Domain(format!(
                "unknown experiment {name:?}; available: {}",
                PRESET_EXPERIMENTS.join(", ")
            )))
        }
    };
    let wtd = name == "wtd";
    let (n_freq, n_ant) = match scale {
        Preset::Desk => (10, 4),
        Preset::Paper => (100, 16),
    };
    let radar = RadarConfig {
        n_freq,
        n_tx: n_ant,
        n_rx: n_ant,
        standoff_radius: if wtd { 50.0 } else { 10.0 },
        field_regime: if wtd { FieldRegime::FarField } else { FieldRegime::NearField },
        ..RadarConfig::default()
    };
    let extent = if wtd { 6.0 } else { 10.0 };
    let (forward_grid, inverse_grid) = match (scale, wtd) {
        // a coarse 16^3 inverse grid cannot explain far-field data from a
        // finer scene at this wavelength, so desk WTD synthesizes on the same grid
        (Preset::Desk, true) => (grid(extent, 16)?, grid(extent, 16)?),
        (Preset::Desk, false) => (grid(extent, 32)?, grid(extent, 16)?),
        (Preset::Paper, false) => (GridSpec::new(extent, 0.2)?, GridSpec::new(extent, 0.4)?),
        (Preset::Paper, true) => (GridSpec::new(extent, 0.12)?, GridSpec::new(extent, 0.24)?),
    };
    let viewpoints = if wtd {
        ViewpointSampling {
            n_az: 41,
            n_el: 21,
            az_range: [0.1 * PI, 0.3 * PI],
            el_range: [0.1 * PI, 0.3 * PI],
            n_train: if scale == Preset::Desk { 200 } else { 500 },
            n_test: 100,
        }
    } else {
        let n = match scale {
            Preset::Desk => 21,
            Preset::Paper => 51,
        };
        ViewpointSampling {
            n_az: n,
            n_el: n,
            az_range: full_azimuth_range(n),
            el_range: FULL_ELEVATION_RANGE,
            n_train: 100,
            n_test: 100,
        }
    };
    let train = match scale {
        Preset::Desk => TrainSettings {
            epochs: 300,
            halve_every: 60,
            loss: LossWeights {
                w_phase: 1.0,
                ..LossWeights::default()
            },
            ..TrainSettings::default()
        },
        Preset::Paper => TrainSettings::default(),
    };
    let spec = ExperimentSpec {
        name: format!("{name}-{}", if scale == Preset::Desk { "desk" } else { "paper" }),
        seed,
        threshold: crate::metrics::DEFAULT_THRESHOLD,
        methods: vec![Method::RiftN, Method::Ls],
        scene,
        forward_grid,
        inverse_grid,
        radar,
        viewpoints,
        train,
        kaczmarz: KaczmarzConfig::default(),
    };
    spec.validate()?;
    Ok(spec)
}
