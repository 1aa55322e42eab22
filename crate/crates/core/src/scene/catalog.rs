use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{ShapeKind, ShapeSpec};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// The catalog shipped with the crate (`scenes/catalog.toml`).
pub const DEFAULT_CATALOG: &str = include_str!("../../scenes/catalog.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    #[serde(default)]
    pub label: String,
    pub center: Vec3,
    pub dims: Vec3,
    #[serde(default = "unit_reflectivity")]
    pub reflectivity: [f64; 2],
    #[serde(default)]
    pub weak: bool,
}

fn unit_reflectivity() -> [f64; 2] {
    [1.0, 0.0]
}

impl BoxSpec {
    pub(crate) fn to_shape(&self, weak_ratio: f64) -> ShapeSpec {
        let reflectivity = if self.weak {
            Complex64::new(weak_ratio, 0.0)
        } else {
            Complex64::new(self.reflectivity[0], self.reflectivity[1])
        };
        ShapeSpec {
            kind: ShapeKind::Box { dims: self.dims },
            center: self.center,
            reflectivity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeScene {
    #[serde(default)]
    pub description: String,
    pub boxes: Vec<BoxSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneCatalog {
    pub scenes: BTreeMap<String, CompositeScene>,
}

impl SceneCatalog {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_CATALOG).expect("bundled scene catalog parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("<catalog>", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&CompositeScene> {
        self.scenes
            .get(name)
            .ok_or_else(|| Error::Domain(format!("scene '{name}' not in catalog")))
    }
}
