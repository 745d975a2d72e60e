//! Helmholtz layer kernels, the direct-summation oracle and the relative
//! error metric used to score the fast summation.

use std::f64::consts::PI;

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::vec3::{self, Vec3};

/// Which derivative of the free-space Green's function to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    /// `e^{iκr} / 4πr`
    Single,
    /// Normal derivative on the source side.
    Double,
    /// Normal derivative on the target side.
    Adjoint,
    /// Mixed second derivative, one normal on each side.
    Quadrupole,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::Single, Layer::Double, Layer::Adjoint, Layer::Quadrupole];

    pub fn needs_source_normal(self) -> bool {
        matches!(self, Layer::Double | Layer::Quadrupole)
    }

    pub fn needs_target_normal(self) -> bool {
        matches!(self, Layer::Adjoint | Layer::Quadrupole)
    }

    pub fn name(self) -> &'static str {
        match self {
            Layer::Single => "single",
            Layer::Double => "double",
            Layer::Adjoint => "adjoint",
            Layer::Quadrupole => "quadrupole",
        }
    }
}

impl std::str::FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Layer::Single),
            "double" => Ok(Layer::Double),
            "adjoint" => Ok(Layer::Adjoint),
            "quadrupole" => Ok(Layer::Quadrupole),
            other => Err(Error::invalid(format!("unknown kernel layer '{other}'"))),
        }
    }
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub layer: Layer,
    /// Wavenumber in radians per unit length.
    pub kappa: f64,
}

impl KernelSpec {
    pub fn new(layer: Layer, kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::invalid(format!("wavenumber must be positive, got {kappa}")));
        }
        Ok(Self { layer, kappa })
    }

    pub fn wavelength(&self) -> f64 {
        2.0 * PI / self.kappa
    }
}

const NORMAL_TOLERANCE: f64 = 1e-12;

/// Positions with optional unit normals and complex densities.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    positions: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
    densities: Option<Vec<c64>>,
}

impl PointSet {
    pub fn new(positions: Vec<Vec3>) -> Result<Self> {
        if let Some(i) = positions.iter().position(|p| !vec3::is_finite(p)) {
            return Err(Error::invalid(format!("position {i} is not finite")));
        }
        Ok(Self {
            positions,
            normals: None,
            densities: None,
        })
    }

    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != self.positions.len() {
            return Err(Error::invalid(format!(
                "{} normals for {} points",
                normals.len(),
                self.positions.len()
            )));
        }
        for (i, n) in normals.iter().enumerate() {
            let len = vec3::norm(n);
            if !len.is_finite() || (len - 1.0).abs() > NORMAL_TOLERANCE {
                return Err(Error::invalid(format!("normal {i} has length {len}, expected 1")));
            }
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_densities(mut self, densities: Vec<c64>) -> Result<Self> {
        if densities.len() != self.positions.len() {
            return Err(Error::invalid(format!(
                "{} densities for {} points",
                densities.len(),
                self.positions.len()
            )));
        }
        self.densities = Some(densities);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn densities(&self) -> Option<&[c64]> {
        self.densities.as_deref()
    }

    pub fn normal(&self, i: usize) -> Option<&Vec3> {
        self.normals.as_ref().map(|n| &n[i])
    }

    /// The points at `indices`, carrying normals and densities along.
    pub fn subset(&self, indices: &[usize]) -> PointSet {
        PointSet {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
            densities: self
                .densities
                .as_ref()
                .map(|d| indices.iter().map(|&i| d[i]).collect()),
        }
    }
}

/// `e^{iκr} / (4πr)`.
#[inline]
pub(crate) fn green(kappa: f64, r: f64) -> c64 {
    let (s, c) = (kappa * r).sin_cos();
    c64::new(c, s) / (4.0 * PI * r)
}

/// Evaluates the layer kernel between target `x` and source `y`.
///
/// `r̂ = (x − y)/|x − y|` points from the source to the target.
pub fn eval_kernel(
    spec: &KernelSpec,
    x: &Vec3,
    y: &Vec3,
    nx: Option<&Vec3>,
    ny: Option<&Vec3>,
) -> Result<c64> {
    let d = vec3::sub(x, y);
    let r2 = vec3::dot(&d, &d);
    if r2 == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    let r = r2.sqrt();
    let inv_r = 1.0 / r;
    let rhat = vec3::scale(&d, inv_r);
    let kr = spec.kappa * r;
    let g = green(spec.kappa, r);
    let value = match spec.layer {
        Layer::Single => g,
        Layer::Double => {
            let ny = ny.ok_or(Error::MissingNormal("double", "source"))?;
            radial_factor(kr, g, inv_r) * vec3::dot(&rhat, ny)
        }
        Layer::Adjoint => {
            let nx = nx.ok_or(Error::MissingNormal("adjoint", "target"))?;
            radial_factor(kr, g, inv_r) * (-vec3::dot(&rhat, nx))
        }
        Layer::Quadrupole => {
            let nx = nx.ok_or(Error::MissingNormal("quadrupole", "target"))?;
            let ny = ny.ok_or(Error::MissingNormal("quadrupole", "source"))?;
            let a = vec3::dot(&rhat, nx) * vec3::dot(&rhat, ny);
            let b = vec3::dot(nx, ny);
            let first = c64::new(kr * kr - 3.0, 3.0 * kr) * a;
            let second = c64::new(1.0, -kr) * b;
            (first + second) * g * (inv_r * inv_r)
        }
    };
    Ok(value)
}

/// `(1 − iκr) e^{iκr} / (4πr²)`, shared by the double and adjoint layers.
#[inline]
fn radial_factor(kr: f64, g: c64, inv_r: f64) -> c64 {
    c64::new(1.0, -kr) * g * inv_r
}

/// `f_i = Σ_j K(x_i, y_j) σ_j` by the double loop. Pairs with identical
/// positions are skipped.
pub fn direct_sum(
    spec: &KernelSpec,
    targets: &PointSet,
    sources: &PointSet,
    sigma: &[c64],
) -> Result<Vec<c64>> {
    if sigma.len() != sources.len() {
        return Err(Error::invalid(format!(
            "{} densities for {} sources",
            sigma.len(),
            sources.len()
        )));
    }
    if spec.layer.needs_target_normal() && targets.normals().is_none() {
        return Err(Error::MissingNormal(spec.layer.name(), "target"));
    }
    if spec.layer.needs_source_normal() && sources.normals().is_none() {
        return Err(Error::MissingNormal(spec.layer.name(), "source"));
    }
    let ys = sources.positions();
    let rows = par::map_range(targets.len(), |i| -> Result<c64> {
        let x = &targets.positions()[i];
        let nx = targets.normal(i);
        let mut acc = c64::new(0.0, 0.0);
        for (j, y) in ys.iter().enumerate() {
            if x == y {
                continue;
            }
            acc += eval_kernel(spec, x, y, nx, sources.normal(j))? * sigma[j];
        }
        Ok(acc)
    });
    rows.into_iter().collect()
}

/// `sqrt(Σ|f_a − f_d|² / Σ|f_d|²)`.
pub fn relative_error(approx: &[c64], reference: &[c64]) -> Result<f64> {
    if approx.len() != reference.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            approx.len(),
            reference.len()
        )));
    }
    let den: f64 = reference.iter().map(|z| z.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::Domain("reference vector is identically zero".into()));
    }
    let num: f64 = approx
        .iter()
        .zip(reference)
        .map(|(a, d)| (a - d).norm_sqr())
        .sum();
    Ok((num / den).sqrt())
}
