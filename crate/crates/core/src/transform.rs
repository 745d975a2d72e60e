//! Forward transforms, block application and inverse transform.
//!
//! Source densities go through `x̃ = Q_χᴴ σ`, the sparse matrix produces
//! `b̃ = Ã x̃`, and target values come back as `b = Q̄_w b̃`. Low-frequency
//! cubes hold all `n` coefficients `[φ; ψ]`; directional (cube, cone) slots
//! hold only scaling coefficients.

use std::time::{Duration, Instant};

use ndarray::{Array1, ArrayView1};
use num_complex::Complex64 as c64;

use crate::assembly::{assemble, BlockTag, NonstandardMatrix, Space};
use crate::basis::{build_forest, BasisForest, Orders, Side};
use crate::error::{Error, Result};
use crate::geometry::cones::{enclosing_cone, ConeId};
use crate::geometry::Tree;
use crate::kernels::{KernelSpec, PointSet};
use crate::par;

/// Directional coefficients of one cube, one entry per active cone.
pub type ConeCoefficients = Vec<(ConeId, Vec<c64>)>;

#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientTree {
    h_l: usize,
    h: usize,
    /// Indexed by `level − h_l`, then cube.
    pub lfr: Vec<Vec<Vec<c64>>>,
    /// Indexed by `level − h`, then cube; sorted by cone.
    pub hfr: Vec<Vec<ConeCoefficients>>,
}

impl CoefficientTree {
    /// All-zero coefficients laid out like `forest`.
    pub fn zeros(tree: &Tree, forest: &BasisForest) -> Self {
        let lfr = (tree.h_l..=tree.leaf_level())
            .map(|l| {
                (0..tree.levels[l].cubes.len())
                    .map(|c| vec![c64::new(0.0, 0.0); forest.lfr(l, c).n])
                    .collect()
            })
            .collect();
        let hfr = (tree.h..tree.h_l)
            .map(|l| {
                (0..tree.levels[l].cubes.len())
                    .map(|c| {
                        forest
                            .hfr_cube(l, c)
                            .iter()
                            .map(|(g, s)| (*g, vec![c64::new(0.0, 0.0); s.k]))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            h_l: tree.h_l,
            h: tree.h,
            lfr,
            hfr,
        }
    }

    pub fn lfr(&self, level: usize, cube: usize) -> &[c64] {
        &self.lfr[level - self.h_l][cube]
    }

    pub fn lfr_mut(&mut self, level: usize, cube: usize) -> &mut Vec<c64> {
        &mut self.lfr[level - self.h_l][cube]
    }

    fn cone_index(&self, level: usize, cube: usize, cone: &ConeId) -> Result<usize> {
        self.hfr[level - self.h][cube]
            .binary_search_by(|(g, _)| g.cmp(cone))
            .map_err(|_| Error::internal(format!("no coefficient slot for cone {cone:?}")))
    }

    pub fn hfr(&self, level: usize, cube: usize, cone: &ConeId) -> Result<&[c64]> {
        let i = self.cone_index(level, cube, cone)?;
        Ok(&self.hfr[level - self.h][cube][i].1)
    }

    pub fn hfr_mut(&mut self, level: usize, cube: usize, cone: &ConeId) -> Result<&mut Vec<c64>> {
        let i = self.cone_index(level, cube, cone)?;
        Ok(&mut self.hfr[level - self.h][cube][i].1)
    }

    /// Every coefficient, low-frequency levels first.
    pub fn flatten(&self) -> Vec<c64> {
        let mut out: Vec<c64> = self.lfr.iter().flatten().flatten().copied().collect();
        for per_cube in &self.hfr {
            for list in per_cube {
                for (_, v) in list {
                    out.extend_from_slice(v);
                }
            }
        }
        out
    }

    /// Zeroes the directional slots.
    pub fn clear_directional(&mut self) {
        for v in self.hfr.iter_mut().flatten().flatten() {
            v.1.iter_mut().for_each(|z| *z = c64::new(0.0, 0.0));
        }
    }

    fn slot(&self, level: usize, cube: usize, space: Space, cone: Option<&ConeId>, k: usize) -> Result<&[c64]> {
        Ok(match space {
            Space::Phi => &self.lfr(level, cube)[..k],
            Space::Psi => &self.lfr(level, cube)[k..],
            Space::Cone => self.hfr(level, cube, cone.ok_or_else(|| Error::internal("cone block without cone"))?)?,
        })
    }

    fn slot_mut(&mut self, level: usize, cube: usize, space: Space, cone: Option<&ConeId>, k: usize) -> Result<&mut [c64]> {
        Ok(match space {
            Space::Phi => &mut self.lfr_mut(level, cube)[..k],
            Space::Psi => &mut self.lfr_mut(level, cube)[k..],
            Space::Cone => &mut self.hfr_mut(level, cube, cone.ok_or_else(|| Error::internal("cone block without cone"))?)?[..],
        })
    }
}

/// Whether forward transforms conjugate the basis (`Qᴴ`, source side) or
/// not (`Qᵀ`, weight side).
#[derive(Clone, Copy, PartialEq, Eq)]
enum Adjoint {
    Conjugate,
    Transpose,
}

fn apply_t(q: ndarray::ArrayView2<'_, c64>, x: &[c64], mode: Adjoint) -> Vec<c64> {
    let xv = ArrayView1::from(x);
    let y: Array1<c64> = match mode {
        Adjoint::Transpose => q.t().dot(&xv),
        Adjoint::Conjugate => q.t().mapv(|z| z.conj()).dot(&xv),
    };
    y.to_vec()
}

fn forward_impl(forest: &BasisForest, tree: &Tree, values: &[c64], mode: Adjoint) -> Result<CoefficientTree> {
    if values.len() != tree.permutation.len() {
        return Err(Error::invalid(format!(
            "{} values for {} points",
            values.len(),
            tree.permutation.len()
        )));
    }
    let mut out = CoefficientTree::zeros(tree, forest);
    let leaf = tree.leaf_level();
    for level in (tree.h_l..=leaf).rev() {
        let n = tree.levels[level].cubes.len();
        let coeffs = par::map_range(n, |c| -> Result<Vec<c64>> {
            let input: Vec<c64> = if level == leaf {
                tree.cube_points(level, c).iter().map(|&i| values[i]).collect()
            } else {
                let mut v = Vec::new();
                for &ch in &tree.cube(level, c).children {
                    let k = forest.lfr(level + 1, ch).k;
                    v.extend_from_slice(&out.lfr(level + 1, ch)[..k]);
                }
                v
            };
            let q = forest
                .lfr(level, c)
                .q()
                .ok_or_else(|| Error::internal("low-frequency split lost its wavelet columns"))?;
            Ok(apply_t(q.view(), &input, mode))
        });
        for (c, v) in coeffs.into_iter().enumerate() {
            *out.lfr_mut(level, c) = v?;
        }
    }
    for level in (tree.h..tree.h_l).rev() {
        let n = tree.levels[level].cubes.len();
        let coeffs = par::map_range(n, |c| -> Result<Vec<(ConeId, Vec<c64>)>> {
            let mut res = Vec::new();
            for (cone, split) in forest.hfr_cube(level, c) {
                let mut input = Vec::new();
                for &ch in &tree.cube(level, c).children {
                    if level + 1 == tree.h_l {
                        let k = forest.lfr(level + 1, ch).k;
                        input.extend_from_slice(&out.lfr(level + 1, ch)[..k]);
                    } else {
                        let e = enclosing_cone(cone).ok_or_else(|| Error::internal("no enclosing cone"))?;
                        input.extend_from_slice(out.hfr(level + 1, ch, &e)?);
                    }
                }
                res.push((*cone, apply_t(split.q1(), &input, mode)));
            }
            Ok(res)
        });
        for (c, v) in coeffs.into_iter().enumerate() {
            out.hfr[level - tree.h][c] = v?;
        }
    }
    Ok(out)
}

/// `x̃ = Q_χᴴ σ` for densities in original point order.
pub fn forward(source: &BasisForest, tree: &Tree, sigma: &[c64]) -> Result<CoefficientTree> {
    forward_impl(source, tree, sigma, Adjoint::Conjugate)
}

/// `b̃ = Q_wᵀ b`, the weight-side analysis whose adjoint is [`inverse`].
pub fn forward_weight(weight: &BasisForest, tree: &Tree, values: &[c64]) -> Result<CoefficientTree> {
    forward_impl(weight, tree, values, Adjoint::Transpose)
}

/// `b̃ = Ã x̃`. Block products run in parallel and are summed in block
/// order, so results do not depend on scheduling.
pub fn apply(
    matrix: &NonstandardMatrix,
    tree: &Tree,
    source: &BasisForest,
    weight: &BasisForest,
    x: &CoefficientTree,
) -> Result<CoefficientTree> {
    let k_of = |forest: &BasisForest, tag: &BlockTag, cube: usize| -> usize {
        if tag.level >= tree.h_l {
            forest.lfr(tag.level, cube).k
        } else {
            0
        }
    };
    let products = par::map(&matrix.blocks, |blk| -> Result<Vec<c64>> {
        let t = &blk.tag;
        let xin = x.slot(t.level, t.source, t.col_space(), t.source_cone.as_ref(), k_of(source, t, t.source))?;
        if xin.len() != blk.cols {
            return Err(Error::internal(format!("block {t:?} has {} columns, slot has {}", blk.cols, xin.len())));
        }
        let mut y = vec![c64::new(0.0, 0.0); blk.rows];
        blk.apply_into(xin, &mut y);
        Ok(y)
    });
    let mut out = CoefficientTree::zeros(tree, weight);
    for (blk, y) in matrix.blocks.iter().zip(products) {
        let y = y?;
        let t = &blk.tag;
        let k = k_of(weight, t, t.target);
        let slot = out.slot_mut(t.level, t.target, t.row_space(), t.target_cone.as_ref(), k)?;
        if slot.len() != y.len() {
            return Err(Error::internal(format!("block {t:?} has {} rows, slot has {}", y.len(), slot.len())));
        }
        for (s, v) in slot.iter_mut().zip(y) {
            *s += v;
        }
    }
    Ok(out)
}

/// Synthesis `Q_w`-side: `conj(q)·b̃` pushed from the coarsest level down
/// to the points, returned in original point order.
fn synthesize(forest: &BasisForest, tree: &Tree, mut coeffs: CoefficientTree, conjugate: bool) -> Result<Vec<c64>> {
    let mul = |q: ndarray::ArrayView2<'_, c64>, v: &[c64]| -> Vec<c64> {
        let xv = ArrayView1::from(v);
        if conjugate {
            q.mapv(|z| z.conj()).dot(&xv).to_vec()
        } else {
            q.dot(&xv).to_vec()
        }
    };
    for level in tree.h..tree.h_l {
        let n = tree.levels[level].cubes.len();
        let pushed = par::map_range(n, |c| -> Vec<(ConeId, Vec<c64>)> {
            forest
                .hfr_cube(level, c)
                .iter()
                .zip(&coeffs.hfr[level - tree.h][c])
                .map(|((g, split), (_, v))| (*g, mul(split.q1(), v)))
                .collect()
        });
        for (c, list) in pushed.into_iter().enumerate() {
            for (cone, v) in list {
                let mut at = 0;
                for &ch in &tree.cube(level, c).children {
                    let dst: &mut [c64] = if level + 1 == tree.h_l {
                        let k = forest.lfr(level + 1, ch).k;
                        &mut coeffs.lfr_mut(level + 1, ch)[..k]
                    } else {
                        let e = enclosing_cone(&cone).ok_or_else(|| Error::internal("no enclosing cone"))?;
                        coeffs.hfr_mut(level + 1, ch, &e)?
                    };
                    for d in dst.iter_mut() {
                        *d += v[at];
                        at += 1;
                    }
                }
            }
        }
    }
    let leaf = tree.leaf_level();
    let mut out = vec![c64::new(0.0, 0.0); tree.permutation.len()];
    for level in tree.h_l..=leaf {
        let n = tree.levels[level].cubes.len();
        let pushed = par::map_range(n, |c| -> Result<Vec<c64>> {
            let q = forest
                .lfr(level, c)
                .q()
                .ok_or_else(|| Error::internal("low-frequency split lost its wavelet columns"))?;
            Ok(mul(q.view(), coeffs.lfr(level, c)))
        });
        for (c, v) in pushed.into_iter().enumerate() {
            let v = v?;
            if level == leaf {
                for (&i, z) in tree.cube_points(level, c).iter().zip(v) {
                    out[i] = z;
                }
            } else {
                let mut at = 0;
                for &ch in &tree.cube(level, c).children {
                    let k = forest.lfr(level + 1, ch).k;
                    for d in coeffs.lfr_mut(level + 1, ch)[..k].iter_mut() {
                        *d += v[at];
                        at += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `b = Q̄_w b̃`, target values in original point order.
pub fn inverse(weight: &BasisForest, tree: &Tree, coeffs: CoefficientTree) -> Result<Vec<c64>> {
    synthesize(weight, tree, coeffs, true)
}

/// `σ = Q_χ x̃`. Inverts [`forward`] once the directional slots and the
/// scaling coefficients below the coarsest low-frequency level are zeroed,
/// since those duplicate information held further up.
pub fn reconstruct_source(source: &BasisForest, tree: &Tree, coeffs: CoefficientTree) -> Result<Vec<c64>> {
    synthesize(source, tree, coeffs, false)
}

/// Configuration of a pipeline build.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineOptions {
    pub epsilon: f64,
    pub orders: Orders,
    pub leaf_capacity: usize,
    pub depth_cap: usize,
}

/// Wall-clock time of the build phases.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimes {
    pub tree: Duration,
    pub bases: Duration,
    pub assembly: Duration,
}

/// Tree, bases and sparse matrix for one point cloud and kernel.
pub struct Pipeline {
    pub tree: Tree,
    pub points: PointSet,
    pub spec: KernelSpec,
    pub options: PipelineOptions,
    pub source: BasisForest,
    pub weight: BasisForest,
    pub matrix: NonstandardMatrix,
    pub times: PhaseTimes,
}

impl Pipeline {
    pub fn build(points: PointSet, spec: KernelSpec, options: PipelineOptions) -> Result<Self> {
        let t0 = Instant::now();
        let tree = crate::geometry::build_tree(&points, spec.kappa, options.leaf_capacity, options.depth_cap)
            .map_err(|e| e.in_phase("tree"))?;
        let t1 = Instant::now();
        let source = build_forest(&tree, &spec, &points, Side::Source, options.orders, options.epsilon)
            .map_err(|e| e.in_phase("source basis"))?;
        let weight = build_forest(&tree, &spec, &points, Side::Weight, options.orders, options.epsilon)
            .map_err(|e| e.in_phase("weight basis"))?;
        let t2 = Instant::now();
        let matrix = assemble(&tree, &points, &spec, &source, &weight, options.epsilon)
            .map_err(|e| e.in_phase("assembly"))?;
        let t3 = Instant::now();
        Ok(Self {
            tree,
            points,
            spec,
            options,
            source,
            weight,
            matrix,
            times: PhaseTimes {
                tree: t1 - t0,
                bases: t2 - t1,
                assembly: t3 - t2,
            },
        })
    }

    /// `f = A σ` through the three transform steps.
    pub fn matvec(&self, sigma: &[c64]) -> Result<Vec<c64>> {
        let x = forward(&self.source, &self.tree, sigma)?;
        let b = apply(&self.matrix, &self.tree, &self.source, &self.weight, &x)?;
        inverse(&self.weight, &self.tree, b)
    }

    pub fn bytes_q(&self) -> usize {
        self.source.bytes() + self.weight.bytes()
    }
}
