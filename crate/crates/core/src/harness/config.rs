//! Experiment configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::basis::Orders;
use crate::error::{Error, Result};
use crate::geometry::tree::{DEFAULT_DEPTH_CAP, DEFAULT_LEAF_CAPACITY};
use crate::kernels::Layer;
use crate::translations::{directional_order, layer_order};

/// Where the point cloud comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Geometry {
    Sphere,
    Csv(PathBuf),
    Obj(PathBuf),
}

impl FromStr for Geometry {
    type Err = Error;

    /// `sphere`, `csv:PATH` or `obj:PATH`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "sphere" {
            return Ok(Geometry::Sphere);
        }
        match s.split_once(':') {
            Some(("csv", p)) if !p.is_empty() => Ok(Geometry::Csv(p.into())),
            Some(("obj", p)) if !p.is_empty() => Ok(Geometry::Obj(p.into())),
            _ => Err(Error::invalid(format!(
                "geometry must be `sphere`, `csv:PATH` or `obj:PATH`, got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Geometry::Sphere => f.write_str("sphere"),
            Geometry::Csv(p) => write!(f, "csv:{}", p.display()),
            Geometry::Obj(p) => write!(f, "obj:{}", p.display()),
        }
    }
}

impl Serialize for Geometry {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// How many sphere points to draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    PointsPerWavelength(f64),
    Count(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub layer: Layer,
    /// Dimensionless size `κD`, with `D` the diameter of the geometry.
    pub kappa_d: f64,
    /// Ignored for file geometries, whose point count is fixed.
    pub resolution: Resolution,
    pub geometry: Geometry,
    pub epsilon: f64,
    pub leaf_capacity: usize,
    /// Overrides the low-frequency interpolation order.
    pub order: Option<usize>,
    pub seed: u64,
    /// `N_t`, the number of targets checked against direct summation.
    pub error_samples: usize,
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            layer: Layer::Single,
            kappa_d: 4.0 * std::f64::consts::PI,
            resolution: Resolution::PointsPerWavelength(10.0),
            geometry: Geometry::Sphere,
            epsilon: 1e-3,
            leaf_capacity: DEFAULT_LEAF_CAPACITY,
            order: None,
            seed: 0,
            error_samples: 500,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_d > 0.0 && self.kappa_d.is_finite()) {
            return Err(Error::invalid(format!("kappa_D must be positive, got {}", self.kappa_d)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        match self.resolution {
            Resolution::PointsPerWavelength(p) if !(p > 0.0 && p.is_finite()) => {
                return Err(Error::invalid(format!("points per wavelength must be positive, got {p}")));
            }
            Resolution::Count(0) => return Err(Error::invalid("point count must be positive")),
            _ => {}
        }
        if self.leaf_capacity == 0 {
            return Err(Error::invalid("leaf capacity must be positive"));
        }
        if self.order == Some(0) {
            return Err(Error::invalid("interpolation order must be positive"));
        }
        if self.error_samples == 0 {
            return Err(Error::invalid("error sample count must be positive"));
        }
        Ok(())
    }

    pub fn orders(&self) -> Orders {
        let low = self.order.unwrap_or_else(|| layer_order(self.epsilon, self.layer));
        Orders {
            low,
            high: directional_order(low),
        }
    }

    pub fn depth_cap(&self) -> usize {
        DEFAULT_DEPTH_CAP
    }
}
