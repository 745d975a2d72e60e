//! Multilevel wavelet and curvelet bases from SVDs of moment matrices.
//!
//! At each cube the moment matrix `M` (interpolation nodes × inputs) is
//! decomposed as `M = U Σ Qᴴ`. The right singular vectors with
//! `σ_i ≥ ε σ₀` become scaling functions `q1`; the rest become wavelets
//! `q0`, whose moments are all below `ε σ₀`.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use ndarray_linalg::SVD;
use num_complex::Complex64 as c64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::cones::{cone_direction, enclosing_cone, ConeId};
use crate::geometry::Tree;
use crate::kernels::{KernelSpec, PointSet};
use crate::par;
use crate::translations::{m2m, s2m, weight_moments, InterpolationGrid};
use crate::vec3::Vec3;

/// Quality measures of one split, recorded before any columns are dropped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SplitAudit {
    /// `max |QᴴQ − I|`.
    pub unitarity_error: f64,
    /// `max |M q0|`.
    pub vanishing_max: f64,
    /// `ε σ₀`.
    pub threshold: f64,
}

impl SplitAudit {
    pub fn is_unitary(&self) -> bool {
        self.unitarity_error <= UNITARITY_TOL
    }

    pub fn has_vanishing_moments(&self) -> bool {
        self.vanishing_max <= self.threshold
    }
}

pub const UNITARITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct BasisSplit {
    /// `[q1 | q0]`, or only `q1` once wavelets are discarded.
    q: Array2<c64>,
    /// Number of scaling columns.
    pub k: usize,
    /// Number of inputs `n`.
    pub n: usize,
    pub sigma0: f64,
    pub singular_values: Vec<f64>,
    /// `M q1`, nodes × `k`.
    pub scaling_moments: Array2<c64>,
    pub audit: SplitAudit,
}

impl BasisSplit {
    pub fn q1(&self) -> ArrayView2<'_, c64> {
        self.q.slice(s![.., ..self.k])
    }

    /// Wavelet columns, if still held.
    pub fn q0(&self) -> Option<ArrayView2<'_, c64>> {
        self.has_wavelets().then(|| self.q.slice(s![.., self.k..]))
    }

    /// Full unitary `[q1 | q0]`, if still held.
    pub fn q(&self) -> Option<&Array2<c64>> {
        self.has_wavelets().then_some(&self.q)
    }

    fn has_wavelets(&self) -> bool {
        self.q.ncols() == self.n
    }

    /// Drops `q0`; directional splits only ever apply `q1`.
    pub fn discard_wavelets(&mut self) {
        if self.has_wavelets() && self.k < self.n {
            self.q = self.q.slice(s![.., ..self.k]).to_owned();
        }
    }

    /// Complex entries held.
    pub fn entries(&self) -> usize {
        self.q.len() + self.scaling_moments.len()
    }
}

/// SVD of a moment matrix into scaling and wavelet columns.
pub fn svd_split(moments: &Array2<c64>, epsilon: f64) -> Result<BasisSplit> {
    let n = moments.ncols();
    if n == 0 {
        return Err(Error::invalid("moment matrix has no columns"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if moments.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::invalid("moment matrix has non-finite entries"));
    }
    // The divide-and-conquer driver loses orthogonality on large inputs with
    // some LAPACK builds; the QR-iteration driver does not.
    let (_, sv, vt) = moments.svd(false, true)?;
    let vt = vt.ok_or_else(|| Error::Linalg("SVD returned no right singular vectors".into()))?;
    debug_assert_eq!(vt.dim(), (n, n));
    let mut q = vt.t().mapv(|z| z.conj());
    normalize_phases(&mut q);

    let mut singular_values = sv.to_vec();
    singular_values.resize(n, 0.0);
    let sigma0 = singular_values[0];
    let threshold = epsilon * sigma0;
    let k = if sigma0 == 0.0 {
        0
    } else {
        singular_values.iter().take_while(|&&s| s >= threshold).count()
    };

    let scaling_moments = moments.dot(&q.slice(s![.., ..k]));
    let vanishing_max = if k < n {
        max_abs(&moments.dot(&q.slice(s![.., k..])))
    } else {
        0.0
    };
    let gram = q.t().mapv(|z| z.conj()).dot(&q);
    let unitarity_error = gram
        .indexed_iter()
        .map(|((i, j), z)| (z - if i == j { c64::new(1.0, 0.0) } else { c64::new(0.0, 0.0) }).norm())
        .fold(0.0, f64::max);

    Ok(BasisSplit {
        q,
        k,
        n,
        sigma0,
        singular_values,
        scaling_moments,
        audit: SplitAudit {
            unitarity_error,
            vanishing_max,
            threshold,
        },
    })
}

/// Rotates each column so its largest-magnitude entry is real positive.
fn normalize_phases(q: &mut Array2<c64>) {
    for mut col in q.columns_mut() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for (i, z) in col.iter().enumerate() {
            let a = z.norm();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if best_abs > 0.0 {
            let rot = col[best].conj() / best_abs;
            col.mapv_inplace(|z| z * rot);
            col[best] = c64::new(col[best].re, 0.0);
        }
    }
}

pub(crate) fn max_abs(a: &Array2<c64>) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Weight,
}

/// Interpolation orders of the two regimes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Orders {
    pub low: usize,
    pub high: usize,
}

/// Bases of one side for every low-frequency cube and every active
/// (cube, cone) pair on high-frequency levels.
#[derive(Clone, Debug)]
pub struct BasisForest {
    pub side: Side,
    pub orders: Orders,
    pub epsilon: f64,
    h_l: usize,
    h: usize,
    /// Indexed by `level − h_l`, then cube.
    lfr: Vec<Vec<BasisSplit>>,
    /// Indexed by `level − h`, then cube; sorted by cone.
    hfr: Vec<Vec<Vec<(ConeId, BasisSplit)>>>,
}

impl BasisForest {
    pub fn lfr(&self, level: usize, cube: usize) -> &BasisSplit {
        &self.lfr[level - self.h_l][cube]
    }

    pub fn hfr(&self, level: usize, cube: usize, cone: &ConeId) -> Result<&BasisSplit> {
        level
            .checked_sub(self.h)
            .and_then(|i| self.hfr.get(i))
            .and_then(|per_cube| per_cube.get(cube))
            .and_then(|list| {
                list.binary_search_by(|(c, _)| c.cmp(cone))
                    .ok()
                    .map(|i| &list[i].1)
            })
            .ok_or_else(|| {
                Error::internal(format!(
                    "no directional basis for cube {cube} on level {level} in cone {cone:?}"
                ))
            })
    }

    pub fn hfr_cube(&self, level: usize, cube: usize) -> &[(ConeId, BasisSplit)] {
        &self.hfr[level - self.h][cube]
    }

    pub fn splits(&self) -> impl Iterator<Item = &BasisSplit> {
        self.lfr
            .iter()
            .flatten()
            .chain(self.hfr.iter().flatten().flatten().map(|(_, s)| s))
    }

    pub fn bytes(&self) -> usize {
        16 * self.splits().map(BasisSplit::entries).sum::<usize>()
    }
}

pub(crate) fn grid(tree: &Tree, level: usize, cube: usize, order: usize) -> Result<InterpolationGrid> {
    let c = tree.cube(level, cube);
    InterpolationGrid::new(order, c.center, c.width)
}

/// Moment matrix of a cube's own points at its level, non-directional.
#[allow(clippy::too_many_arguments)]
pub fn direct_moments(
    tree: &Tree,
    spec: &KernelSpec,
    points: &PointSet,
    side: Side,
    level: usize,
    cube: usize,
    order: usize,
    u: Option<&Vec3>,
) -> Result<Array2<c64>> {
    let g = grid(tree, level, cube, order)?;
    let idx = tree.cube_points(level, cube);
    match side {
        Side::Source => s2m(spec, &g, u, points, idx),
        Side::Weight => weight_moments(spec, &g, u, points, idx),
    }
}

/// Builds the low-frequency forest from the leaves up to `h_l` and the
/// directional forest from `h_l − 1` up to `h`.
pub fn build_forest(
    tree: &Tree,
    spec: &KernelSpec,
    points: &PointSet,
    side: Side,
    orders: Orders,
    epsilon: f64,
) -> Result<BasisForest> {
    let leaf = tree.leaf_level();
    let mut lfr_rev: Vec<Vec<BasisSplit>> = Vec::new();
    for level in (tree.h_l..=leaf).rev() {
        let n = tree.levels[level].cubes.len();
        let splits = par::map_range(n, |c| -> Result<BasisSplit> {
            let m = if level == leaf {
                direct_moments(tree, spec, points, side, level, c, orders.low, None)?
            } else {
                let parent = grid(tree, level, c, orders.low)?;
                let children = &tree.cube(level, c).children;
                let below = lfr_rev.last().expect("finer level built first");
                stack_children(children.iter().map(|&ch| -> Result<Array2<c64>> {
                    let g = grid(tree, level + 1, ch, orders.low)?;
                    Ok(m2m(spec.kappa, &g, None, &parent, None)?.dot(&below[ch].scaling_moments))
                }))?
            };
            svd_split(&m, epsilon)
        });
        lfr_rev.push(splits.into_iter().collect::<Result<_>>()?);
    }
    lfr_rev.reverse();

    let mut hfr_rev: Vec<Vec<Vec<(ConeId, BasisSplit)>>> = Vec::new();
    for level in (tree.h..tree.h_l).rev() {
        let n = tree.levels[level].cubes.len();
        let per_cube = par::map_range(n, |c| -> Result<Vec<(ConeId, BasisSplit)>> {
            let parent = grid(tree, level, c, orders.high)?;
            let children = &tree.cube(level, c).children;
            let mut out = Vec::new();
            for cone in tree.active_cones(level, c) {
                let u = cone_direction(cone);
                let m = stack_children(children.iter().map(|&ch| -> Result<Array2<c64>> {
                    if level + 1 == tree.h_l {
                        let g = grid(tree, level + 1, ch, orders.low)?;
                        let sm = &lfr_rev[0][ch].scaling_moments;
                        Ok(m2m(spec.kappa, &g, None, &parent, Some(&u))?.dot(sm))
                    } else {
                        let child_cone = enclosing_cone(cone).ok_or_else(|| {
                            Error::internal("class-0 cone above another directional level")
                        })?;
                        let below = hfr_rev.last().expect("finer level built first");
                        let list = &below[ch];
                        let split = list
                            .binary_search_by(|(g, _)| g.cmp(&child_cone))
                            .map(|i| &list[i].1)
                            .map_err(|_| Error::internal("enclosing cone not active in child"))?;
                        let g = grid(tree, level + 1, ch, orders.high)?;
                        let uc = cone_direction(&child_cone);
                        Ok(m2m(spec.kappa, &g, Some(&uc), &parent, Some(&u))?.dot(&split.scaling_moments))
                    }
                }))?;
                let mut split = svd_split(&m, epsilon)?;
                split.discard_wavelets();
                out.push((*cone, split));
            }
            Ok(out)
        });
        hfr_rev.push(per_cube.into_iter().collect::<Result<_>>()?);
    }
    hfr_rev.reverse();

    Ok(BasisForest {
        side,
        orders,
        epsilon,
        h_l: tree.h_l,
        h: tree.h,
        lfr: lfr_rev,
        hfr: hfr_rev,
    })
}

fn stack_children(blocks: impl Iterator<Item = Result<Array2<c64>>>) -> Result<Array2<c64>> {
    let blocks: Vec<Array2<c64>> = blocks.collect::<Result<_>>()?;
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(1), &views).map_err(|e| Error::internal(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_tree;
    use crate::harness::sampling::fibonacci_sphere;
    use crate::kernels::Layer;
    use crate::translations::interpolation_order;
    use rand::{Rng, SeedableRng};

    #[test]
    fn large_random_split_is_unitary() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for (m, n) in [(729, 600), (729, 1000)] {
            let a = Array2::from_shape_fn((m, n), |_| c64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            assert!(svd_split(&a, 1e-6).unwrap().audit.is_unitary());
        }
    }

    #[test]
    fn diagonal_example() {
        let mut m = Array2::zeros((2, 2));
        m[[0, 0]] = c64::new(2.0, 0.0);
        m[[1, 1]] = c64::new(1e-9, 0.0);
        let s = svd_split(&m, 1e-3).unwrap();
        assert_eq!(s.k, 1);
        assert!((s.q1()[[0, 0]] - c64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(s.q1()[[1, 0]].norm() < 1e-15);
        assert!((s.q0().unwrap()[[1, 0]] - c64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((s.scaling_moments[[0, 0]] - c64::new(2.0, 0.0)).norm() < 1e-15);
        assert!(s.scaling_moments[[1, 0]].norm() < 1e-15);
    }

    #[test]
    fn zero_matrix_is_all_wavelets() {
        let m = Array2::zeros((8, 4));
        let s = svd_split(&m, 1e-3).unwrap();
        assert_eq!(s.k, 0);
        assert_eq!(s.q0().unwrap().dim(), (4, 4));
        assert!(s.audit.is_unitary());
    }

    #[test]
    fn known_rank() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut m = Array2::<c64>::zeros((5, 20));
        for _ in 0..3 {
            let a: Vec<c64> = (0..5).map(|_| c64::new(rng.random(), rng.random())).collect();
            let b: Vec<c64> = (0..20).map(|_| c64::new(rng.random(), rng.random())).collect();
            for i in 0..5 {
                for j in 0..20 {
                    m[[i, j]] += a[i] * b[j];
                }
            }
        }
        let s = svd_split(&m, 1e-6).unwrap();
        assert_eq!(s.k, 3);
        assert!(s.audit.is_unitary());
        assert!(s.audit.has_vanishing_moments());
    }

    #[test]
    fn wide_and_tall_inputs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for (r, c) in [(8, 30), (30, 8), (1, 1)] {
            let m = Array2::from_shape_fn((r, c), |_| c64::new(rng.random(), rng.random()));
            let s = svd_split(&m, 1e-3).unwrap();
            assert_eq!(s.q().unwrap().dim(), (c, c));
            assert!(s.k <= r.min(c));
            assert!(s.audit.is_unitary());
            let recon = s.scaling_moments.dot(&s.q1().t().mapv(|z| z.conj()));
            let err = max_abs(&(&recon - &m));
            assert!(err <= 1e-3 * s.sigma0 * 2.0);
        }
    }

    #[test]
    fn phase_normalization() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let m = Array2::from_shape_fn((6, 6), |_| c64::new(rng.random(), rng.random()));
        let s = svd_split(&m, 1e-3).unwrap();
        for col in s.q().unwrap().columns() {
            let best = col.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let z = col.iter().find(|z| z.norm() == best).unwrap();
            assert_eq!(z.im, 0.0);
            assert!(z.re > 0.0);
        }
        assert!(svd_split(&m, 0.0).is_err());
        let mut bad = m.clone();
        bad[[0, 0]] = c64::new(f64::NAN, 0.0);
        assert!(svd_split(&bad, 1e-3).is_err());
    }

    fn sphere_forests(n: usize, kappa: f64, eps: f64, layer: Layer) -> (Tree, PointSet, BasisForest, BasisForest) {
        let pts = fibonacci_sphere(n);
        let tree = build_tree(&pts, kappa, 40, 20).unwrap();
        let spec = KernelSpec::new(layer, kappa).unwrap();
        let p = interpolation_order(eps);
        let orders = Orders { low: p, high: p + 2 };
        let s = build_forest(&tree, &spec, &pts, Side::Source, orders, eps).unwrap();
        let w = build_forest(&tree, &spec, &pts, Side::Weight, orders, eps).unwrap();
        (tree, pts, s, w)
    }

    #[test]
    fn sphere_splits_pass_audits() {
        let (tree, _, s, w) = sphere_forests(2000, 4.0 * std::f64::consts::PI, 1e-3, Layer::Double);
        assert!(tree.h < tree.h_l, "expected directional levels");
        for split in s.splits().chain(w.splits()) {
            assert!(split.audit.is_unitary(), "{:?}", split.audit);
            assert!(split.audit.has_vanishing_moments(), "{:?}", split.audit);
            assert!(split.k <= 7usize.pow(3));
        }
    }

    #[test]
    fn single_layer_sides_agree() {
        let (tree, _, s, w) = sphere_forests(600, 3.0, 1e-3, Layer::Single);
        for level in tree.h_l..=tree.leaf_level() {
            for c in 0..tree.levels[level].cubes.len() {
                let a = &s.lfr(level, c).singular_values;
                let b = &w.lfr(level, c).singular_values;
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() <= 1e-12 * a[0]);
                }
            }
        }
    }

    /// Child-composed moments agree with moments computed directly from the
    /// points at the coarser level.
    #[test]
    fn nesting_consistency() {
        let eps = 1e-6;
        let (tree, pts, s, _) = sphere_forests(800, 2.0, eps, Layer::Single);
        let spec = KernelSpec::new(Layer::Single, 2.0).unwrap();
        assert!(tree.leaf_level() > tree.h_l);
        let level = tree.leaf_level() - 1;
        for c in 0..tree.levels[level].cubes.len() {
            let direct = direct_moments(&tree, &spec, &pts, Side::Source, level, c, s.orders.low, None).unwrap();
            // Map the point-space moments onto the composed basis: the
            // children's q transforms followed by this cube's q.
            let split = s.lfr(level, c);
            let mut offset = 0;
            let mut composed_cols = Vec::new();
            for &ch in &tree.cube(level, c).children {
                let cs = s.lfr(level + 1, ch);
                let pcount = tree.cube(level + 1, ch).len();
                let dm = direct.slice(s![.., offset..offset + pcount]).to_owned();
                composed_cols.push(dm.dot(&cs.q1().to_owned()));
                offset += pcount;
            }
            let views: Vec<_> = composed_cols.iter().map(|b| b.view()).collect();
            let stacked = concatenate(Axis(1), &views).unwrap();
            let via_points = stacked.dot(&split.q1());
            let err = max_abs(&(&via_points - &split.scaling_moments));
            assert!(err <= 10.0 * eps * split.sigma0, "{err} vs {}", split.sigma0);
        }
    }
}
