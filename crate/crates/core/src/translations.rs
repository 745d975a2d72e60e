//! Plane-wave-modulated tensor Chebyshev interpolation and the five
//! translation operators built on it.
//!
//! For a cube pair with target cube `C` and source cube `B`, the kernel
//! factors as
//!
//! ```text
//! K(x, y) ≈ Σ_{r,s} T_r(x) D_rs S_s(y)
//! T_r(x) = L_r(x) e^{−iκ u_C·x}
//! S_s(y) = L_s(y) e^{−iκ u_B·y}
//! D_rs   = e^{iκ u_C·x̄_r} G(x̄_r, ȳ_s) e^{iκ u_B·ȳ_s}
//! ```
//!
//! where `L` are tensor Lagrange polynomials on Chebyshev nodes `x̄`, `ȳ`,
//! `G` is the single-layer kernel and `u_C`, `u_B` are each cube's cone
//! direction toward the other (zero at low frequency). Normal derivatives
//! of the double, adjoint and quadrupole layers act on `S` and `T`.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64 as c64;

use crate::error::{Error, Result};
use crate::kernels::{green, KernelSpec, Layer, PointSet};
use crate::vec3::{self, Vec3};

/// Chebyshev nodes of the first kind on `[−1, 1]`, in decreasing order.
pub fn chebyshev_nodes(p: usize) -> Vec<f64> {
    (0..p)
        .map(|m| (PI * (m as f64 + 0.5) / p as f64).cos())
        .collect()
}

/// Interpolation order for a target accuracy:
/// `⌈(4/3)·log₁₀(1/ε)⌉ + 1`.
pub fn interpolation_order(epsilon: f64) -> usize {
    ((4.0 / 3.0) * (1.0 / epsilon).log10() - 1e-9).ceil().max(1.0) as usize + 1
}

/// Order for a kernel layer. Normal derivatives act on the interpolant and
/// each costs roughly one digit, so every derivative adds one node per axis.
pub fn layer_order(epsilon: f64, layer: Layer) -> usize {
    interpolation_order(epsilon)
        + usize::from(layer.needs_source_normal())
        + usize::from(layer.needs_target_normal())
}

/// Order used on high-frequency levels, where the directional expansion
/// converges more slowly.
pub fn directional_order(low_frequency_order: usize) -> usize {
    low_frequency_order + 2
}

/// Tensor Chebyshev grid scaled to an axis-aligned cube.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationGrid {
    pub order: usize,
    pub center: Vec3,
    pub width: f64,
    reference: Vec<f64>,
}

impl InterpolationGrid {
    pub fn new(order: usize, center: Vec3, width: f64) -> Result<Self> {
        if order < 2 {
            return Err(Error::invalid(format!("interpolation order must be at least 2, got {order}")));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::invalid(format!("cube width must be positive, got {width}")));
        }
        Ok(Self {
            order,
            center,
            width,
            reference: chebyshev_nodes(order),
        })
    }

    pub fn len(&self) -> usize {
        self.order.pow(3)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Node offsets from the cube centre, tensor index `(a·p + b)·p + c`.
    pub fn relative_nodes(&self) -> Vec<Vec3> {
        let h = self.width / 2.0;
        let r = &self.reference;
        let mut out = Vec::with_capacity(self.len());
        for &a in r {
            for &b in r {
                for &c in r {
                    out.push([h * a, h * b, h * c]);
                }
            }
        }
        out
    }

    pub fn nodes(&self) -> Vec<Vec3> {
        self.relative_nodes()
            .iter()
            .map(|d| vec3::add(&self.center, d))
            .collect()
    }

    fn local(&self, x: &Vec3) -> Result<Vec3> {
        let h = self.width / 2.0;
        let t = [
            (x[0] - self.center[0]) / h,
            (x[1] - self.center[1]) / h,
            (x[2] - self.center[2]) / h,
        ];
        if t.iter().any(|c| c.is_nan() || c.abs() > 1.0 + 1e-10) {
            return Err(Error::invalid(format!(
                "point {x:?} lies outside the cube centred at {:?} with width {}",
                self.center, self.width
            )));
        }
        Ok(t)
    }

    /// Tensor Lagrange values at `x` and, when requested, their gradients.
    fn basis(&self, x: &Vec3, with_gradient: bool) -> Result<(Vec<f64>, Option<Vec<Vec3>>)> {
        let t = self.local(x)?;
        let p = self.order;
        let axes: Vec<(Vec<f64>, Vec<f64>)> =
            t.iter().map(|&s| lagrange(&self.reference, s)).collect();
        let scale = 2.0 / self.width;
        let mut values = Vec::with_capacity(p * p * p);
        let mut grads = with_gradient.then(|| Vec::with_capacity(p * p * p));
        for a in 0..p {
            for b in 0..p {
                let vab = axes[0].0[a] * axes[1].0[b];
                for c in 0..p {
                    values.push(vab * axes[2].0[c]);
                    if let Some(g) = grads.as_mut() {
                        g.push([
                            scale * axes[0].1[a] * axes[1].0[b] * axes[2].0[c],
                            scale * axes[0].0[a] * axes[1].1[b] * axes[2].0[c],
                            scale * vab * axes[2].1[c],
                        ]);
                    }
                }
            }
        }
        Ok((values, grads))
    }

    /// Whether `other` lies inside this cube.
    fn encloses(&self, other: &InterpolationGrid) -> bool {
        let slack = 1e-10 * self.width;
        (0..3).all(|d| {
            (other.center[d] - self.center[d]).abs() + other.width / 2.0
                <= self.width / 2.0 + slack
        })
    }
}

/// Lagrange basis values and derivatives at `t` by direct products.
fn lagrange(nodes: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let p = nodes.len();
    let mut values = vec![0.0; p];
    let mut derivs = vec![0.0; p];
    for m in 0..p {
        let mut v = 1.0;
        for j in 0..p {
            if j != m {
                v *= (t - nodes[j]) / (nodes[m] - nodes[j]);
            }
        }
        values[m] = v;
        let mut d = 0.0;
        for k in 0..p {
            if k == m {
                continue;
            }
            let mut term = 1.0 / (nodes[m] - nodes[k]);
            for j in 0..p {
                if j != m && j != k {
                    term *= (t - nodes[j]) / (nodes[m] - nodes[j]);
                }
            }
            d += term;
        }
        derivs[m] = d;
    }
    (values, derivs)
}

#[inline]
fn plane_wave(kappa: f64, u: Option<&Vec3>, x: &Vec3, sign: f64) -> c64 {
    match u {
        Some(u) => c64::from_polar(1.0, sign * kappa * vec3::dot(u, x)),
        None => c64::new(1.0, 0.0),
    }
}

/// Values of `L_s(y) e^{−iκu·y}` (or its derivative along `normal`) for
/// every node `s`.
fn expansion_row(
    kappa: f64,
    grid: &InterpolationGrid,
    u: Option<&Vec3>,
    y: &Vec3,
    normal: Option<&Vec3>,
) -> Result<Vec<c64>> {
    let (values, grads) = grid.basis(y, normal.is_some())?;
    let phase = plane_wave(kappa, u, y, -1.0);
    Ok(match (normal, grads) {
        (Some(n), Some(grads)) => {
            let un = u.map_or(0.0, |u| vec3::dot(u, n));
            values
                .iter()
                .zip(&grads)
                .map(|(&l, g)| c64::new(vec3::dot(g, n), -kappa * un * l) * phase)
                .collect()
        }
        _ => values.iter().map(|&l| phase * l).collect(),
    })
}

/// Source-to-moment matrix, `p³ × n`, entry `(s, j) = S_s(y_j)`.
pub fn s2m(
    spec: &KernelSpec,
    grid: &InterpolationGrid,
    u: Option<&Vec3>,
    sources: &PointSet,
    indices: &[usize],
) -> Result<Array2<c64>> {
    let needs_normal = spec.layer.needs_source_normal();
    if needs_normal && sources.normals().is_none() {
        return Err(Error::MissingNormal(spec.layer.name(), "source"));
    }
    let mut out = Array2::zeros((grid.len(), indices.len()));
    for (j, &i) in indices.iter().enumerate() {
        let normal = if needs_normal { sources.normal(i) } else { None };
        let row = expansion_row(spec.kappa, grid, u, &sources.positions()[i], normal)?;
        for (s, v) in row.into_iter().enumerate() {
            out[[s, j]] = v;
        }
    }
    Ok(out)
}

/// Local-to-target matrix, `n × p³`, entry `(i, r) = T_r(x_i)`.
pub fn l2t(
    spec: &KernelSpec,
    grid: &InterpolationGrid,
    u: Option<&Vec3>,
    targets: &PointSet,
    indices: &[usize],
) -> Result<Array2<c64>> {
    Ok(weight_moments(spec, grid, u, targets, indices)?.reversed_axes())
}

/// Weight-side moment matrix `l2tᵀ`, `p³ × n`.
pub fn weight_moments(
    spec: &KernelSpec,
    grid: &InterpolationGrid,
    u: Option<&Vec3>,
    targets: &PointSet,
    indices: &[usize],
) -> Result<Array2<c64>> {
    let needs_normal = spec.layer.needs_target_normal();
    if needs_normal && targets.normals().is_none() {
        return Err(Error::MissingNormal(spec.layer.name(), "target"));
    }
    let mut out = Array2::zeros((grid.len(), indices.len()));
    for (j, &i) in indices.iter().enumerate() {
        let normal = if needs_normal { targets.normal(i) } else { None };
        let row = expansion_row(spec.kappa, grid, u, &targets.positions()[i], normal)?;
        for (s, v) in row.into_iter().enumerate() {
            out[[s, j]] = v;
        }
    }
    Ok(out)
}

/// Moment-to-moment matrix, `p_parent³ × p_child³`, entry
/// `(t, s) = L^P_t(ȳ^c_s) e^{iκ(u_c − u_P)·ȳ^c_s}`.
pub fn m2m(
    kappa: f64,
    child: &InterpolationGrid,
    u_child: Option<&Vec3>,
    parent: &InterpolationGrid,
    u_parent: Option<&Vec3>,
) -> Result<Array2<c64>> {
    if !parent.encloses(child) {
        return Err(Error::invalid("m2m child cube is not inside the parent cube"));
    }
    let zero = [0.0; 3];
    let du = vec3::sub(u_child.unwrap_or(&zero), u_parent.unwrap_or(&zero));
    let directional = u_child.is_some() || u_parent.is_some();
    let mut out = Array2::zeros((parent.len(), child.len()));
    for (s, y) in child.nodes().iter().enumerate() {
        let (values, _) = parent.basis(y, false)?;
        let phase = if directional {
            c64::from_polar(1.0, kappa * vec3::dot(&du, y))
        } else {
            c64::new(1.0, 0.0)
        };
        for (t, &l) in values.iter().enumerate() {
            out[[t, s]] = phase * l;
        }
    }
    Ok(out)
}

/// Local-to-local matrix, `p_child³ × p_parent³`; the transpose of [`m2m`]
/// under the symmetric modulation convention.
pub fn l2l(
    kappa: f64,
    parent: &InterpolationGrid,
    u_parent: Option<&Vec3>,
    child: &InterpolationGrid,
    u_child: Option<&Vec3>,
) -> Result<Array2<c64>> {
    Ok(m2m(kappa, child, u_child, parent, u_parent)?.reversed_axes())
}

/// Moment-to-local matrix `D` between a target and a source grid.
pub fn m2l(
    kappa: f64,
    target: &InterpolationGrid,
    u_target: Option<&Vec3>,
    source: &InterpolationGrid,
    u_source: Option<&Vec3>,
) -> Result<Array2<c64>> {
    let delta = vec3::sub(&target.center, &source.center);
    let rel = m2l_relative(kappa, target, u_target, source, u_source, &delta)?;
    Ok(rel * m2l_phase(kappa, &target.center, u_target, &source.center, u_source))
}

/// `D` with nodes taken relative to the cube centres and `delta` the
/// target centre minus the source centre. Multiply by [`m2l_phase`] to get
/// the absolute operator; with no cone directions the phase is 1.
pub fn m2l_relative(
    kappa: f64,
    target: &InterpolationGrid,
    u_target: Option<&Vec3>,
    source: &InterpolationGrid,
    u_source: Option<&Vec3>,
    delta: &Vec3,
) -> Result<Array2<c64>> {
    let xs = target.relative_nodes();
    let ys = source.relative_nodes();
    let tp: Vec<c64> = xs.iter().map(|x| plane_wave(kappa, u_target, x, 1.0)).collect();
    let sp: Vec<c64> = ys.iter().map(|y| plane_wave(kappa, u_source, y, 1.0)).collect();
    let mut out = Array2::zeros((xs.len(), ys.len()));
    for (r, x) in xs.iter().enumerate() {
        let base = vec3::add(delta, x);
        for (s, y) in ys.iter().enumerate() {
            let d = vec3::sub(&base, y);
            let dist = vec3::norm(&d);
            if dist == 0.0 {
                return Err(Error::Domain("interpolation nodes of the two cubes coincide".into()));
            }
            out[[r, s]] = tp[r] * green(kappa, dist) * sp[s];
        }
    }
    Ok(out)
}

/// `e^{iκ(u_C·c_C + u_B·c_B)}`.
pub fn m2l_phase(
    kappa: f64,
    target_center: &Vec3,
    u_target: Option<&Vec3>,
    source_center: &Vec3,
    u_source: Option<&Vec3>,
) -> c64 {
    plane_wave(kappa, u_target, target_center, 1.0) * plane_wave(kappa, u_source, source_center, 1.0)
}
