//! One build, one product, one comparison against direct summation.

use std::fs;
use std::mem::size_of;
use std::time::Instant;

use num_complex::Complex64 as c64;
use serde::Serialize;

use crate::assembly::{factorization_audit, CompressionAudit, FactorizationAudit, NnzStats};
use crate::basis::Orders;
use crate::error::{Error, Result};
use crate::geometry::tree::{ConeLevelStats, SeparationAudit};
use crate::geometry::{Cube, Interaction, Tree, TreeFlags};
use crate::harness::config::{ExperimentConfig, Geometry, Resolution};
use crate::harness::io::{load_points, PointFormat};
use crate::harness::sampling::{random_densities, sample_sphere, sample_targets, sphere_with_count, SPHERE_DIAMETER};
use crate::kernels::{direct_sum, relative_error, KernelSpec, PointSet};
use crate::transform::{CoefficientTree, Pipeline, PipelineOptions};
use crate::vec3;

/// Interaction pairs sampled for the factorization check.
pub const FACTORIZATION_PAIRS: usize = 50;

/// Counts of splits failing the two basis checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BasisAudit {
    pub splits: usize,
    pub non_unitary: usize,
    pub moment_violations: usize,
    pub max_unitarity_error: f64,
    /// Largest `max |M q0| / (ε σ₀)`.
    pub max_moment_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TreeSummary {
    pub levels: usize,
    pub h: usize,
    pub h_l: usize,
    pub lambda: f64,
    pub flags: TreeFlags,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub kappa: f64,
    pub orders: Orders,
    #[serde(rename = "N")]
    pub n: usize,
    /// Tree and basis construction, seconds.
    #[serde(rename = "T_c")]
    pub t_c: f64,
    /// Sparse matrix assembly.
    #[serde(rename = "T_m")]
    pub t_m: f64,
    /// One fast product.
    #[serde(rename = "T_p")]
    pub t_p: f64,
    /// Everything except the reference summation.
    #[serde(rename = "T_t")]
    pub t_t: f64,
    #[serde(rename = "M_Q")]
    pub m_q: usize,
    #[serde(rename = "M_m")]
    pub m_m: usize,
    #[serde(rename = "M_t")]
    pub m_t: usize,
    pub nnz: usize,
    pub eps_a: f64,
    pub error_targets: usize,
    pub cone_stats: Vec<ConeLevelStats>,
    pub tree: TreeSummary,
    pub blocks: NnzStats,
    pub compression: CompressionAudit,
    pub basis: BasisAudit,
    pub separation: SeparationAudit,
    pub factorization: FactorizationAudit,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON with every timing field zeroed, for run-to-run comparison.
    pub fn to_json_without_timings(&self) -> Result<String> {
        let mut r = self.clone();
        r.t_c = 0.0;
        r.t_m = 0.0;
        r.t_p = 0.0;
        r.t_t = 0.0;
        r.to_json()
    }
}

/// Diameter of a loaded geometry, taken as its bounding-box diagonal.
fn bbox_diameter(points: &PointSet) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points.positions() {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    vec3::norm(&vec3::sub(&hi, &lo))
}

/// Points with densities, and the wavenumber matching `κD`.
pub fn prepare_points(config: &ExperimentConfig) -> Result<(PointSet, f64)> {
    let (format, path) = match &config.geometry {
        Geometry::Sphere => {
            let pts = match config.resolution {
                Resolution::PointsPerWavelength(ppw) => sample_sphere(config.kappa_d, ppw, config.seed)?,
                Resolution::Count(n) => sphere_with_count(n, config.seed)?,
            };
            return Ok((pts, config.kappa_d / SPHERE_DIAMETER));
        }
        Geometry::Csv(p) => (PointFormat::Csv, p),
        Geometry::Obj(p) => (PointFormat::Obj, p),
    };
    let pts = load_points(path, format)?;
    let d = bbox_diameter(&pts);
    if d == 0.0 {
        return Err(Error::invalid("geometry has zero extent"));
    }
    let n = pts.len();
    Ok((pts.with_densities(random_densities(n, config.seed))?, config.kappa_d / d))
}

pub fn basis_audit(p: &Pipeline) -> BasisAudit {
    let mut a = BasisAudit::default();
    for s in p.source.splits().chain(p.weight.splits()) {
        a.splits += 1;
        let u = &s.audit;
        a.non_unitary += usize::from(!u.is_unitary());
        a.moment_violations += usize::from(!u.has_vanishing_moments());
        a.max_unitarity_error = a.max_unitarity_error.max(u.unitarity_error);
        if u.threshold > 0.0 {
            a.max_moment_ratio = a.max_moment_ratio.max(u.vanishing_max / u.threshold);
        }
    }
    a
}

/// Approximate heap footprint of the tree.
pub fn tree_bytes(tree: &Tree) -> usize {
    let mut b = tree.permutation.len() * size_of::<usize>();
    for lv in &tree.levels {
        for (c, cube) in lv.cubes.iter().enumerate() {
            b += size_of::<Cube>() + cube.children.len() * size_of::<usize>();
            b += lv.near[c].len() * size_of::<usize>();
            b += lv.interactions[c].len() * size_of::<Interaction>();
        }
    }
    b
}

/// Builds the representation for `config`, applies it once and measures
/// `ε_a` on `N_t` seeded targets. Writes the JSON report when an output
/// path is configured.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let (points, kappa) = prepare_points(config).map_err(|e| e.in_phase("points"))?;
    let spec = KernelSpec::new(config.layer, kappa)?;
    let orders = config.orders();
    let options = PipelineOptions {
        epsilon: config.epsilon,
        orders,
        leaf_capacity: config.leaf_capacity,
        depth_cap: config.depth_cap(),
    };
    let sigma: Vec<c64> = points
        .densities()
        .ok_or_else(|| Error::internal("point set has no densities"))?
        .to_vec();

    let start = Instant::now();
    let pipeline = Pipeline::build(points, spec, options)?;
    let t0 = Instant::now();
    let fast = pipeline.matvec(&sigma).map_err(|e| e.in_phase("matvec"))?;
    let t_p = t0.elapsed().as_secs_f64();
    let t_t = start.elapsed().as_secs_f64();

    let n = pipeline.points.len();
    let targets = sample_targets(n, config.error_samples, config.seed);
    let reference = direct_sum(&spec, &pipeline.points.subset(&targets), &pipeline.points, &sigma)
        .map_err(|e| e.in_phase("direct summation"))?;
    let approx: Vec<c64> = targets.iter().map(|&i| fast[i]).collect();
    let eps_a = relative_error(&approx, &reference).map_err(|e| e.in_phase("error estimate"))?;

    let m_q = pipeline.bytes_q();
    let blocks = pipeline.matrix.stats(m_q);
    let m_m = blocks.bytes_blocks;
    // Source and weight coefficient trees plus the density and result vectors.
    let slots = CoefficientTree::zeros(&pipeline.tree, &pipeline.source).flatten().len()
        + CoefficientTree::zeros(&pipeline.tree, &pipeline.weight).flatten().len();
    let coefficients = size_of::<c64>() * (slots + 2 * n);
    let tree = &pipeline.tree;
    let report = Report {
        config: config.clone(),
        kappa,
        orders,
        n,
        t_c: (pipeline.times.tree + pipeline.times.bases).as_secs_f64(),
        t_m: pipeline.times.assembly.as_secs_f64(),
        t_p,
        t_t,
        m_q,
        m_m,
        m_t: m_q + m_m + tree_bytes(tree) + coefficients,
        nnz: blocks.nnz_total,
        eps_a,
        error_targets: targets.len(),
        cone_stats: tree.cone_stats(),
        tree: TreeSummary {
            levels: tree.levels.len(),
            h: tree.h,
            h_l: tree.h_l,
            lambda: tree.lambda,
            flags: tree.flags,
        },
        compression: pipeline.matrix.compression_audit(config.epsilon),
        blocks,
        basis: basis_audit(&pipeline),
        separation: tree.audit_separation(),
        factorization: factorization_audit(tree, &pipeline.points, &spec, orders, FACTORIZATION_PAIRS, 200, config.seed)
            .map_err(|e| e.in_phase("factorization audit"))?,
    };
    if let Some(path) = &config.output {
        fs::write(path, report.to_json()?).map_err(|e| Error::from(e).in_phase("write report"))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Layer;

    fn small(layer: Layer, n: usize, eps: f64) -> ExperimentConfig {
        ExperimentConfig {
            layer,
            kappa_d: 6.0,
            resolution: Resolution::Count(n),
            epsilon: eps,
            leaf_capacity: 20,
            seed: 3,
            error_samples: 100,
            ..Default::default()
        }
    }

    #[test]
    fn report_invariants() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("r.json");
        let cfg = ExperimentConfig { output: Some(out.clone()), ..small(Layer::Double, 600, 1e-3) };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.n, 600);
        assert_eq!(r.error_targets, 100);
        assert!(r.eps_a <= 1e-2, "{}", r.eps_a);
        assert!(r.t_t >= r.t_c + r.t_m + r.t_p - 1e-3);
        assert!(r.m_t >= r.m_q + r.m_m);
        assert_eq!(r.basis.non_unitary, 0);
        assert_eq!(r.compression.violations, 0);
        assert_eq!(r.factorization.pairs, 50);
        assert!(r.factorization.max_relative_error <= 10.0 * cfg.epsilon, "{:?}", r.factorization);
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        for key in ["N", "T_c", "T_m", "T_p", "T_t", "M_Q", "M_m", "M_t", "nnz", "eps_a", "cone_stats"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["config"]["geometry"], "sphere");
    }

    #[test]
    fn deterministic_without_timings() {
        let cfg = small(Layer::Single, 400, 1e-3);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.to_json_without_timings().unwrap(), b.to_json_without_timings().unwrap());
    }

    #[test]
    fn file_geometry_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let rows: String = crate::harness::sampling::fibonacci_sphere(200)
            .positions()
            .iter()
            .map(|p| format!("{},{},{},{},{},{}\n", p[0], p[1], p[2], p[0], p[1], p[2]))
            .collect();
        fs::write(&path, rows).unwrap();
        let cfg = ExperimentConfig { geometry: Geometry::Csv(path), ..small(Layer::Adjoint, 1, 1e-3) };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.n, 200);
        assert!(r.eps_a <= 1e-2);

        let missing = ExperimentConfig { geometry: Geometry::Obj("/nonexistent.obj".into()), ..small(Layer::Single, 1, 1e-3) };
        assert!(matches!(run_experiment(&missing), Err(Error::Phase { phase: "points", .. })));
        assert!(run_experiment(&small(Layer::Single, 10, 2.0)).is_err());
    }
}
