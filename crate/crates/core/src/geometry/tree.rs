use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use serde::Serialize;

use super::cones::{self, ConeId};
use crate::error::{Error, Result};
use crate::kernels::PointSet;
use crate::vec3::{self, Vec3};

/// Relative slack used when comparing widths and distances against the
/// wavelength, so that exact powers of two land on the intended side.
const REGIME_TOL: f64 = 1e-12;

pub const DEFAULT_LEAF_CAPACITY: usize = 40;
pub const DEFAULT_DEPTH_CAP: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    LowFrequency,
    HighFrequency,
}

#[derive(Clone, Debug)]
pub struct Cube {
    pub level: usize,
    pub index: [i64; 3],
    pub center: Vec3,
    pub width: f64,
    pub parent: Option<usize>,
    /// Indices into the next level, in octant order.
    pub children: Vec<usize>,
    /// Span of the tree's point permutation held by this cube.
    pub points: Range<usize>,
}

impl Cube {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let h = self.width / 2.0 * (1.0 + 1e-12);
        (0..3).all(|d| (p[d] - self.center[d]).abs() <= h)
    }
}

/// An interaction-field entry. In the high-frequency regime `cone` is the
/// cone of the owning cube that contains the direction to `cube`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub cube: usize,
    pub cone: Option<ConeId>,
}

#[derive(Clone, Debug)]
pub struct Level {
    pub width: f64,
    pub regime: Regime,
    pub cubes: Vec<Cube>,
    /// Same-level near field of each cube, sorted, including the cube itself.
    pub near: Vec<Vec<usize>>,
    pub interactions: Vec<Vec<Interaction>>,
    lookup: HashMap<[i64; 3], usize>,
}

impl Level {
    pub fn find(&self, index: &[i64; 3]) -> Option<usize> {
        self.lookup.get(index).copied()
    }

    pub fn is_high_frequency(&self) -> bool {
        self.regime == Regime::HighFrequency
    }
}

/// Warnings raised while building the tree.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TreeFlags {
    /// The depth cap stopped refinement while some leaf still held more
    /// than the leaf capacity.
    pub oversized_leaf: bool,
    /// The depth cap stopped refinement before cubes became smaller than
    /// the wavelength.
    pub wavelength_unresolved: bool,
}

#[derive(Clone, Debug)]
pub struct Tree {
    pub levels: Vec<Level>,
    /// `permutation[k]` is the original index of the `k`-th point in tree
    /// order.
    pub permutation: Vec<usize>,
    pub kappa: f64,
    pub lambda: f64,
    pub leaf_capacity: usize,
    /// Coarsest level whose cubes are smaller than the wavelength.
    pub h_l: usize,
    /// Coarsest level carrying interactions, capped at `h_l`.
    pub h: usize,
    pub flags: TreeFlags,
    /// Active cones per cube for high-frequency levels `h..h_l`, indexed by
    /// `level − h`.
    active: Vec<Vec<Vec<ConeId>>>,
}

/// Smallest power of two not below `extent`, or 1 for a degenerate cloud.
fn root_width(extent: f64) -> f64 {
    if extent <= 0.0 {
        1.0
    } else {
        2f64.powi(extent.log2().ceil() as i32)
    }
}

pub fn build_tree(
    points: &PointSet,
    kappa: f64,
    leaf_capacity: usize,
    depth_cap: usize,
) -> Result<Tree> {
    if points.is_empty() {
        return Err(Error::invalid("cannot build a tree over zero points"));
    }
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::invalid(format!("wavenumber must be positive, got {kappa}")));
    }
    if leaf_capacity == 0 {
        return Err(Error::invalid("leaf capacity must be at least 1"));
    }
    let pos = points.positions();
    let lambda = 2.0 * std::f64::consts::PI / kappa;
    let mut lo = pos[0];
    let mut hi = pos[0];
    for p in pos {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let extent = (0..3).map(|d| hi[d] - lo[d]).fold(0.0, f64::max);
    let w0 = root_width(extent);
    let center = vec3::scale(&vec3::add(&lo, &hi), 0.5);
    let origin = vec3::sub(&center, &[w0 / 2.0; 3]);
    let is_hfr = |w: f64| w >= lambda * (1.0 - REGIME_TOL);

    let mut permutation: Vec<usize> = (0..pos.len()).collect();
    let root = Cube {
        level: 0,
        index: [0; 3],
        center,
        width: w0,
        parent: None,
        children: Vec::new(),
        points: 0..pos.len(),
    };
    let mut levels = vec![new_level(w0, is_hfr(w0), vec![root])];
    let mut flags = TreeFlags::default();

    loop {
        let finest = levels.last().unwrap();
        let crowded = finest.cubes.iter().any(|c| c.len() > leaf_capacity);
        let coarse = finest.is_high_frequency();
        // The first low-frequency level below a high-frequency one is never
        // the leaf level, so wavelets always exist beneath the regime switch.
        let boundary = levels.len() >= 2 && levels[levels.len() - 2].is_high_frequency();
        if !crowded && !coarse && !boundary {
            break;
        }
        if levels.len() > depth_cap {
            flags.oversized_leaf = crowded;
            flags.wavelength_unresolved = coarse || boundary;
            break;
        }
        let l = levels.len();
        let w = finest.width / 2.0;
        let cells = 1i64 << l;
        let mut next = Vec::new();
        let parents = levels.last_mut().unwrap();
        for (pi, parent) in parents.cubes.iter_mut().enumerate() {
            let span = parent.points.clone();
            let mut buckets: [Vec<usize>; 8] = Default::default();
            for &pt in &permutation[span.clone()] {
                let mut oct = 0;
                for d in 0..3 {
                    let cell = (((pos[pt][d] - origin[d]) / w).floor() as i64).clamp(0, cells - 1);
                    let bit = (cell - 2 * parent.index[d]).clamp(0, 1);
                    oct |= (bit as usize) << d;
                }
                buckets[oct].push(pt);
            }
            let mut cursor = span.start;
            for (oct, bucket) in buckets.iter().enumerate() {
                if bucket.is_empty() {
                    continue;
                }
                let bits = [(oct & 1) as i64, ((oct >> 1) & 1) as i64, ((oct >> 2) & 1) as i64];
                let index = [
                    2 * parent.index[0] + bits[0],
                    2 * parent.index[1] + bits[1],
                    2 * parent.index[2] + bits[2],
                ];
                let center = [
                    origin[0] + (index[0] as f64 + 0.5) * w,
                    origin[1] + (index[1] as f64 + 0.5) * w,
                    origin[2] + (index[2] as f64 + 0.5) * w,
                ];
                permutation[cursor..cursor + bucket.len()].copy_from_slice(bucket);
                parent.children.push(next.len());
                next.push(Cube {
                    level: l,
                    index,
                    center,
                    width: w,
                    parent: Some(pi),
                    children: Vec::new(),
                    points: cursor..cursor + bucket.len(),
                });
                cursor += bucket.len();
            }
        }
        levels.push(new_level(w, is_hfr(w), next));
    }

    let leaf = levels.len() - 1;
    let h_l = levels
        .iter()
        .position(|lv| !lv.is_high_frequency())
        .unwrap_or(leaf);

    fill_fields(&mut levels, lambda);

    let h = levels[..h_l]
        .iter()
        .position(|lv| lv.interactions.iter().any(|i| !i.is_empty()))
        .unwrap_or(h_l);

    let mut tree = Tree {
        levels,
        permutation,
        kappa,
        lambda,
        leaf_capacity,
        h_l,
        h,
        flags,
        active: Vec::new(),
    };
    tree.active = active_cones(&tree);
    Ok(tree)
}

fn new_level(width: f64, hfr: bool, cubes: Vec<Cube>) -> Level {
    let lookup = cubes.iter().enumerate().map(|(i, c)| (c.index, i)).collect();
    let n = cubes.len();
    Level {
        width,
        regime: if hfr { Regime::HighFrequency } else { Regime::LowFrequency },
        cubes,
        near: vec![Vec::new(); n],
        interactions: vec![Vec::new(); n],
        lookup,
    }
}

/// Whether two same-level cubes with lattice offset `d` are near.
///
/// Low frequency: the cubes touch. High frequency: the centre distance is at
/// most `max(2w, 2w²/λ)`.
fn is_near(level: &Level, lambda: f64, d: &[i64; 3]) -> bool {
    match level.regime {
        Regime::LowFrequency => d.iter().all(|c| c.abs() <= 1),
        Regime::HighFrequency => {
            let radius_cells = f64::max(2.0, 2.0 * level.width / lambda);
            let dist2 = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64;
            dist2 <= radius_cells * radius_cells * (1.0 + REGIME_TOL)
        }
    }
}

fn offset(a: &[i64; 3], b: &[i64; 3]) -> [i64; 3] {
    [b[0] - a[0], b[1] - a[1], b[2] - a[2]]
}

fn fill_fields(levels: &mut [Level], lambda: f64) {
    levels[0].near[0] = vec![0];
    for l in 1..levels.len() {
        let (upper, lower) = levels.split_at_mut(l);
        let parent_level = &upper[l - 1];
        let level = &mut lower[0];
        let class = level
            .is_high_frequency()
            .then(|| cones::width_class(level.width, lambda));
        for c in 0..level.cubes.len() {
            let p = level.cubes[c].parent.expect("non-root cube has a parent");
            let mut candidates: Vec<usize> = parent_level.near[p]
                .iter()
                .flat_map(|&bp| parent_level.cubes[bp].children.iter().copied())
                .collect();
            candidates.sort_unstable();
            let mut near = Vec::new();
            let mut inter = Vec::new();
            for b in candidates {
                let d = offset(&level.cubes[c].index, &level.cubes[b].index);
                if is_near(level, lambda, &d) {
                    near.push(b);
                } else {
                    let cone = class.map(|k| {
                        cones::cone_of_direction(k, &[d[0] as f64, d[1] as f64, d[2] as f64])
                    });
                    inter.push(Interaction { cube: b, cone });
                }
            }
            level.near[c] = near;
            level.interactions[c] = inter;
        }
    }
}

/// Cones needed per cube on high-frequency levels: the cube's own tagged
/// interactions plus the enclosing cones of its parent's active cones.
fn active_cones(tree: &Tree) -> Vec<Vec<Vec<ConeId>>> {
    let mut out: Vec<Vec<Vec<ConeId>>> = Vec::new();
    for l in tree.h..tree.h_l {
        let level = &tree.levels[l];
        let mut per_cube = Vec::with_capacity(level.cubes.len());
        for (c, cube) in level.cubes.iter().enumerate() {
            let mut set: BTreeSet<ConeId> =
                level.interactions[c].iter().filter_map(|i| i.cone).collect();
            if l > tree.h {
                let parent = cube.parent.expect("non-root cube has a parent");
                for g in &out[l - 1 - tree.h][parent] {
                    if let Some(e) = cones::enclosing_cone(g) {
                        set.insert(e);
                    }
                }
            }
            per_cube.push(set.into_iter().collect());
        }
        out.push(per_cube);
    }
    out
}

/// Cone usage on one high-frequency level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConeLevelStats {
    pub level: usize,
    pub width_over_lambda: f64,
    pub class: u32,
    pub cubes: usize,
    pub average_active: f64,
    pub max_active: usize,
    pub bound: u64,
}

/// Result of checking high-frequency interaction pairs for parabolic
/// separation and cone containment.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SeparationAudit {
    pub pairs: usize,
    /// Smallest `dist / (w²/λ)` over all pairs; at least 1 when separated.
    pub min_separation_ratio: f64,
    /// Largest `angle − angular radius` of the tagged cone; at most 0 when
    /// every direction lies in its patch.
    pub max_angle_excess: f64,
    /// Largest `angle · κw` over all pairs.
    pub max_scaled_angle: f64,
}

impl Tree {
    /// Finest level `L`.
    pub fn leaf_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn cube(&self, level: usize, c: usize) -> &Cube {
        &self.levels[level].cubes[c]
    }

    /// Original point indices held by a cube.
    pub fn cube_points(&self, level: usize, c: usize) -> &[usize] {
        &self.permutation[self.cube(level, c).points.clone()]
    }

    pub fn near_field(&self, level: usize, c: usize) -> &[usize] {
        &self.levels[level].near[c]
    }

    pub fn interaction_field(&self, level: usize, c: usize) -> &[Interaction] {
        &self.levels[level].interactions[c]
    }

    /// Width class of a high-frequency level.
    pub fn width_class(&self, level: usize) -> u32 {
        cones::width_class(self.levels[level].width, self.lambda)
    }

    /// Active cones of a cube on a level in `h..h_l`, sorted.
    pub fn active_cones(&self, level: usize, c: usize) -> &[ConeId] {
        if level < self.h || level >= self.h_l {
            return &[];
        }
        &self.active[level - self.h][c]
    }

    pub fn cone_stats(&self) -> Vec<ConeLevelStats> {
        (self.h..self.h_l)
            .map(|l| {
                let per_cube = &self.active[l - self.h];
                let total: usize = per_cube.iter().map(Vec::len).sum();
                let class = self.width_class(l);
                ConeLevelStats {
                    level: l,
                    width_over_lambda: self.levels[l].width / self.lambda,
                    class,
                    cubes: per_cube.len(),
                    average_active: total as f64 / per_cube.len().max(1) as f64,
                    max_active: per_cube.iter().map(Vec::len).max().unwrap_or(0),
                    bound: cones::cone_count(class),
                }
            })
            .collect()
    }

    pub fn audit_separation(&self) -> SeparationAudit {
        let mut audit = SeparationAudit {
            min_separation_ratio: f64::INFINITY,
            max_angle_excess: f64::NEG_INFINITY,
            ..Default::default()
        };
        for level in &self.levels {
            if !level.is_high_frequency() {
                continue;
            }
            let w = level.width;
            for (c, list) in level.interactions.iter().enumerate() {
                for it in list {
                    let Some(cone) = it.cone else { continue };
                    let d = vec3::sub(&level.cubes[it.cube].center, &level.cubes[c].center);
                    let dist = vec3::norm(&d);
                    let dir = vec3::scale(&d, 1.0 / dist);
                    let angle = vec3::dot(&dir, &cones::cone_direction(&cone))
                        .clamp(-1.0, 1.0)
                        .acos();
                    audit.pairs += 1;
                    audit.min_separation_ratio =
                        audit.min_separation_ratio.min(dist / (w * w / self.lambda));
                    audit.max_angle_excess =
                        audit.max_angle_excess.max(angle - cones::angular_radius(&cone));
                    audit.max_scaled_angle = audit.max_scaled_angle.max(angle * self.kappa * w);
                }
            }
        }
        audit
    }

    /// Lattice offset from cube `c` to cube `b` on the same level.
    pub fn offset(&self, level: usize, c: usize, b: usize) -> [i64; 3] {
        offset(&self.cube(level, c).index, &self.cube(level, b).index)
    }
}
