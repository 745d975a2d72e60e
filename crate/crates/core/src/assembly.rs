//! Assembly of the sparse non-standard system matrix.
//!
//! Leaf near-field kernel blocks are transformed into the wavelet bases and
//! their wavelet parts stored; scaling parts are carried one level up,
//! merged with interaction blocks computed from scaling moments, and
//! transformed again. At `h_l` the remaining scaling blocks are stored as
//! they are. On high-frequency levels each cone-tagged interaction pair
//! contributes one block between directional scaling functions. Every
//! stored block is thresholded a posteriori.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::{s, Array2};
use num_complex::Complex64 as c64;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::basis::{BasisForest, BasisSplit, Orders};
use crate::error::{Error, Result};
use crate::geometry::cones::{cone_direction, cone_of_direction, ConeId};
use crate::geometry::Tree;
use crate::kernels::{eval_kernel, KernelSpec, PointSet};
use crate::par;
use crate::translations::{l2t, m2l, m2l_phase, m2l_relative, s2m, InterpolationGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Wavelet rows, wavelet columns.
    LfrPsiPsi,
    /// Wavelet rows, scaling columns.
    LfrPsiPhi,
    /// Scaling rows, wavelet columns.
    LfrPhiPsi,
    /// Scaling rows and columns at the coarsest low-frequency level.
    NiPhiPhi,
    /// Directional scaling rows and columns of one cone pair.
    HfrConePhiPhi,
}

impl BlockKind {
    pub const ALL: [BlockKind; 5] = [
        BlockKind::LfrPsiPsi,
        BlockKind::LfrPsiPhi,
        BlockKind::LfrPhiPsi,
        BlockKind::NiPhiPhi,
        BlockKind::HfrConePhiPhi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::LfrPsiPsi => "lfr_psi_psi",
            BlockKind::LfrPsiPhi => "lfr_psi_phi",
            BlockKind::LfrPhiPsi => "lfr_phi_psi",
            BlockKind::NiPhiPhi => "ni_phi_phi",
            BlockKind::HfrConePhiPhi => "hfr_cone_phi_phi",
        }
    }

    fn code(self) -> i32 {
        self as i32
    }

    fn from_code(c: i32) -> Result<Self> {
        BlockKind::ALL
            .get(c as usize)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown block kind code {c}")))
    }
}

/// Where a block's rows or columns live in the coefficient layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    /// Scaling part (first `k` entries) of a low-frequency cube.
    Phi,
    /// Wavelet part (entries `k..n`) of a low-frequency cube.
    Psi,
    /// Directional scaling coefficients of a (cube, cone) pair.
    Cone,
}

/// `target` and `source` index cubes on `level`; cones are set exactly for
/// directional blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct BlockTag {
    pub level: usize,
    pub target: usize,
    pub kind: BlockKind,
    pub target_cone: Option<ConeId>,
    pub source: usize,
    pub source_cone: Option<ConeId>,
}

impl BlockTag {
    pub fn row_space(&self) -> Space {
        match self.kind {
            BlockKind::LfrPsiPsi | BlockKind::LfrPsiPhi => Space::Psi,
            BlockKind::LfrPhiPsi | BlockKind::NiPhiPhi => Space::Phi,
            BlockKind::HfrConePhiPhi => Space::Cone,
        }
    }

    pub fn col_space(&self) -> Space {
        match self.kind {
            BlockKind::LfrPsiPsi | BlockKind::LfrPhiPsi => Space::Psi,
            BlockKind::LfrPsiPhi | BlockKind::NiPhiPhi => Space::Phi,
            BlockKind::HfrConePhiPhi => Space::Cone,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Dense(Array2<c64>),
    /// Row-major positions `row·cols + col` with values.
    Sparse(Vec<(u32, c64)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredBlock {
    pub tag: BlockTag,
    pub rows: usize,
    pub cols: usize,
    pub payload: Payload,
    /// `‖B − B̃‖₁ / ‖B‖₁` when the block was sparsified.
    pub compression_error: Option<f64>,
}

impl StoredBlock {
    pub fn nnz(&self) -> usize {
        match &self.payload {
            Payload::Dense(a) => a.len(),
            Payload::Sparse(e) => e.len(),
        }
    }

    pub fn bytes(&self) -> usize {
        match &self.payload {
            Payload::Dense(a) => 16 * a.len(),
            Payload::Sparse(e) => 20 * e.len(),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.payload, Payload::Dense(_))
    }

    /// `y += B x`.
    pub fn apply_into(&self, x: &[c64], y: &mut [c64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        match &self.payload {
            Payload::Dense(a) => {
                for (yi, row) in y.iter_mut().zip(a.rows()) {
                    let mut acc = c64::new(0.0, 0.0);
                    for (aij, xj) in row.iter().zip(x) {
                        acc += aij * xj;
                    }
                    *yi += acc;
                }
            }
            Payload::Sparse(e) => {
                for &(pos, v) in e {
                    let (i, j) = (pos as usize / self.cols, pos as usize % self.cols);
                    y[i] += v * x[j];
                }
            }
        }
    }

    pub fn to_dense(&self) -> Array2<c64> {
        match &self.payload {
            Payload::Dense(a) => a.clone(),
            Payload::Sparse(e) => {
                let mut a = Array2::zeros((self.rows, self.cols));
                for &(pos, v) in e {
                    a[[pos as usize / self.cols, pos as usize % self.cols]] = v;
                }
                a
            }
        }
    }
}

/// Induced 1-norm: the largest absolute column sum.
pub fn norm1(b: &Array2<c64>) -> f64 {
    b.columns()
        .into_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Storage is sparse only below this fraction of nonzeros: a sparse entry
/// costs 20 bytes against 16 for a dense one.
const SPARSE_FRACTION: f64 = 0.8;

/// Drops entries below `η = ε‖B‖₁/m`. The thresholded block is kept when
/// it is cheaper to store than the dense original; otherwise the original
/// is kept unchanged.
pub fn compress_block(tag: BlockTag, block: Array2<c64>, epsilon: f64) -> StoredBlock {
    let (rows, cols) = block.dim();
    let n1 = norm1(&block);
    if n1 == 0.0 {
        return StoredBlock {
            tag,
            rows,
            cols,
            payload: Payload::Sparse(Vec::new()),
            compression_error: Some(0.0),
        };
    }
    let eta = epsilon * n1 / rows as f64;
    let kept = block.iter().filter(|z| z.norm() >= eta).count();
    if (kept as f64) < SPARSE_FRACTION * (rows * cols) as f64 {
        let mut entries = Vec::with_capacity(kept);
        let mut dropped = vec![0.0; cols];
        for ((i, j), z) in block.indexed_iter() {
            if z.norm() >= eta {
                entries.push(((i * cols + j) as u32, *z));
            } else {
                dropped[j] += z.norm();
            }
        }
        let err = dropped.iter().copied().fold(0.0, f64::max) / n1;
        StoredBlock {
            tag,
            rows,
            cols,
            payload: Payload::Sparse(entries),
            compression_error: Some(err),
        }
    } else {
        StoredBlock {
            tag,
            rows,
            cols,
            payload: Payload::Dense(block),
            compression_error: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct NonstandardMatrix {
    pub blocks: Vec<StoredBlock>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct NnzStats {
    pub nnz_total: usize,
    pub bytes_blocks: usize,
    pub bytes_q: usize,
    pub dense_blocks: usize,
    pub sparse_blocks: usize,
    pub block_count_by_kind: BTreeMap<&'static str, usize>,
}

/// Outcome of the per-block a-posteriori bound check.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CompressionAudit {
    pub sparsified: usize,
    pub max_ratio: f64,
    pub violations: usize,
}

impl NonstandardMatrix {
    pub fn nnz(&self) -> usize {
        self.blocks.iter().map(StoredBlock::nnz).sum()
    }

    pub fn bytes(&self) -> usize {
        self.blocks.iter().map(StoredBlock::bytes).sum()
    }

    pub fn stats(&self, bytes_q: usize) -> NnzStats {
        let mut stats = NnzStats {
            bytes_q,
            ..Default::default()
        };
        for b in &self.blocks {
            stats.nnz_total += b.nnz();
            stats.bytes_blocks += b.bytes();
            if b.is_dense() {
                stats.dense_blocks += 1;
            } else {
                stats.sparse_blocks += 1;
            }
            *stats.block_count_by_kind.entry(b.tag.kind.name()).or_default() += 1;
        }
        stats
    }

    pub fn compression_audit(&self, epsilon: f64) -> CompressionAudit {
        let mut audit = CompressionAudit::default();
        for r in self.blocks.iter().filter_map(|b| b.compression_error) {
            audit.sparsified += 1;
            audit.max_ratio = audit.max_ratio.max(r);
            if r > epsilon {
                audit.violations += 1;
            }
        }
        audit
    }

    /// Little-endian dump: magic, version, block count, total nonzeros,
    /// then per block its tag, shape, a dense flag and the payload.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.blocks.len() as u64).to_le_bytes())?;
        w.write_all(&(self.nnz() as u64).to_le_bytes())?;
        for b in &self.blocks {
            let t = &b.tag;
            let cone = |c: &Option<ConeId>| match c {
                Some(c) => [c.class as i32, i32::from(c.face), c.i as i32, c.j as i32],
                None => [-1; 4],
            };
            let mut fields = vec![t.level as i32, t.target as i32, t.source as i32, t.kind.code()];
            fields.extend(cone(&t.target_cone));
            fields.extend(cone(&t.source_cone));
            for f in fields {
                w.write_all(&f.to_le_bytes())?;
            }
            w.write_all(&(b.rows as u32).to_le_bytes())?;
            w.write_all(&(b.cols as u32).to_le_bytes())?;
            match &b.payload {
                Payload::Dense(a) => {
                    w.write_all(&[1u8])?;
                    for z in a.iter() {
                        w.write_all(&z.re.to_le_bytes())?;
                        w.write_all(&z.im.to_le_bytes())?;
                    }
                }
                Payload::Sparse(e) => {
                    w.write_all(&[0u8])?;
                    w.write_all(&(e.len() as u64).to_le_bytes())?;
                    for &(pos, z) in e {
                        let (i, j) = (pos as usize / b.cols, pos as usize % b.cols);
                        w.write_all(&(i as i32).to_le_bytes())?;
                        w.write_all(&(j as i32).to_le_bytes())?;
                        w.write_all(&z.re.to_le_bytes())?;
                        w.write_all(&z.im.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::invalid("not a non-standard matrix dump"));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported dump version {version}")));
        }
        let count = read_u64(r)? as usize;
        let _nnz = read_u64(r)?;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            let mut f = [0i32; 12];
            for v in f.iter_mut() {
                *v = read_i32(r)?;
            }
            let cone = |c: &[i32]| {
                (c[0] >= 0).then(|| ConeId {
                    class: c[0] as u32,
                    face: c[1] as u8,
                    i: c[2] as u32,
                    j: c[3] as u32,
                })
            };
            let tag = BlockTag {
                level: f[0] as usize,
                target: f[1] as usize,
                source: f[2] as usize,
                kind: BlockKind::from_code(f[3])?,
                target_cone: cone(&f[4..8]),
                source_cone: cone(&f[8..12]),
            };
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            let mut flag = [0u8];
            r.read_exact(&mut flag)?;
            let payload = if flag[0] == 1 {
                let mut a = Array2::zeros((rows, cols));
                for z in a.iter_mut() {
                    *z = c64::new(read_f64(r)?, read_f64(r)?);
                }
                Payload::Dense(a)
            } else {
                let n = read_u64(r)? as usize;
                let mut e = Vec::with_capacity(n);
                for _ in 0..n {
                    let i = read_i32(r)? as usize;
                    let j = read_i32(r)? as usize;
                    e.push(((i * cols + j) as u32, c64::new(read_f64(r)?, read_f64(r)?)));
                }
                Payload::Sparse(e)
            };
            blocks.push(StoredBlock {
                tag,
                rows,
                cols,
                payload,
                compression_error: None,
            });
        }
        Ok(Self { blocks })
    }
}

const MAGIC: &[u8; 6] = b"CBMNS1";
const FORMAT_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_i32<R: Read>(r: &mut R) -> Result<i32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(i32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Direct kernel block between two index sets; coincident pairs are zero.
pub fn s2t_block(spec: &KernelSpec, points: &PointSet, targets: &[usize], sources: &[usize]) -> Result<Array2<c64>> {
    let pos = points.positions();
    let mut a = Array2::zeros((targets.len(), sources.len()));
    for (i, &ti) in targets.iter().enumerate() {
        for (j, &sj) in sources.iter().enumerate() {
            if pos[ti] == pos[sj] {
                continue;
            }
            a[[i, j]] = eval_kernel(spec, &pos[ti], &pos[sj], points.normal(ti), points.normal(sj))?;
        }
    }
    Ok(a)
}

fn full_q(split: &BasisSplit) -> Result<&Array2<c64>> {
    split
        .q()
        .ok_or_else(|| Error::internal("low-frequency split lost its wavelet columns"))
}

/// `Q_wᵀ A Q_χ`.
fn transform_block(w: &BasisSplit, a: &Array2<c64>, s: &BasisSplit) -> Result<Array2<c64>> {
    Ok(full_q(w)?.t().dot(a).dot(full_q(s)?))
}

struct Context<'a> {
    tree: &'a Tree,
    spec: &'a KernelSpec,
    source: &'a BasisForest,
    weight: &'a BasisForest,
    epsilon: f64,
}

/// A transformed near-pair block split into its four parts: the three
/// wavelet parts are stored and the scaling part returned for the level
/// above.
fn split_and_store(
    ctx: &Context<'_>,
    level: usize,
    c: usize,
    b: usize,
    t: Array2<c64>,
    out: &mut Vec<StoredBlock>,
) -> Array2<c64> {
    let kc = ctx.weight.lfr(level, c).k;
    let kb = ctx.source.lfr(level, b).k;
    let (m, n) = t.dim();
    let tag = |kind| BlockTag {
        level,
        target: c,
        kind,
        target_cone: None,
        source: b,
        source_cone: None,
    };
    let parts = [
        (BlockKind::LfrPsiPsi, s![kc.., kb..], m - kc, n - kb),
        (BlockKind::LfrPsiPhi, s![kc.., ..kb], m - kc, kb),
        (BlockKind::LfrPhiPsi, s![..kc, kb..], kc, n - kb),
    ];
    for (kind, sl, r, cl) in parts {
        if r > 0 && cl > 0 {
            out.push(compress_block(tag(kind), t.slice(sl).to_owned(), ctx.epsilon));
        }
    }
    t.slice(s![..kc, ..kb]).to_owned()
}

/// Pairs `(c, position in I^c)` on one level grouped by lattice offset.
fn group_by_offset(tree: &Tree, level: usize) -> BTreeMap<[i64; 3], Vec<(usize, usize)>> {
    let mut groups: BTreeMap<[i64; 3], Vec<(usize, usize)>> = BTreeMap::new();
    for (c, list) in tree.levels[level].interactions.iter().enumerate() {
        for (j, it) in list.iter().enumerate() {
            groups.entry(tree.offset(level, c, it.cube)).or_default().push((c, j));
        }
    }
    groups
}

/// Scaling-moment blocks `SM_w(c)ᵀ D SM_χ(b)` of every interaction pair on
/// a low-frequency level, handed to `sink` one offset group at a time.
fn lfr_interactions(
    ctx: &Context<'_>,
    level: usize,
    mut sink: impl FnMut(usize, usize, Array2<c64>) -> Result<()>,
) -> Result<()> {
    let tree = ctx.tree;
    let order = ctx.source.orders.low;
    let w = tree.levels[level].width;
    let g = InterpolationGrid::new(order, [0.0; 3], w)?;
    for (off, pairs) in group_by_offset(tree, level) {
        let delta = [-(off[0] as f64) * w, -(off[1] as f64) * w, -(off[2] as f64) * w];
        let d = m2l_relative(ctx.spec.kappa, &g, None, &g, None, &delta)?;
        let blocks = par::map(&pairs, |&(c, j)| {
            let b = tree.interaction_field(level, c)[j].cube;
            let left = ctx.weight.lfr(level, c).scaling_moments.t().dot(&d);
            left.dot(&ctx.source.lfr(level, b).scaling_moments)
        });
        for (&(c, j), blk) in pairs.iter().zip(blocks) {
            sink(c, j, blk)?;
        }
    }
    Ok(())
}

/// Assembles the non-standard matrix from the two forests.
pub fn assemble(
    tree: &Tree,
    points: &PointSet,
    spec: &KernelSpec,
    source: &BasisForest,
    weight: &BasisForest,
    epsilon: f64,
) -> Result<NonstandardMatrix> {
    let ctx = Context {
        tree,
        spec,
        source,
        weight,
        epsilon,
    };
    let leaf = tree.leaf_level();
    let mut blocks: Vec<StoredBlock> = Vec::new();

    // Leaf near field: dense kernel blocks in the wavelet bases.
    let leaf_out = par::map_range(tree.levels[leaf].cubes.len(), |c| -> Result<(Vec<StoredBlock>, Vec<Array2<c64>>)> {
        let mut stored = Vec::new();
        let mut carry = Vec::new();
        for &b in tree.near_field(leaf, c) {
            let a = s2t_block(spec, points, tree.cube_points(leaf, c), tree.cube_points(leaf, b))?;
            let t = transform_block(weight.lfr(leaf, c), &a, source.lfr(leaf, b))?;
            carry.push(split_and_store(&ctx, leaf, c, b, t, &mut stored));
        }
        Ok((stored, carry))
    });
    let mut carry: Vec<Vec<Array2<c64>>> = Vec::with_capacity(leaf_out.len());
    for r in leaf_out {
        let (stored, cr) = r?;
        blocks.extend(stored);
        carry.push(cr);
    }

    // Coarser low-frequency levels: stack children blocks and transform.
    for level in (tree.h_l..leaf).rev() {
        let child = level + 1;
        let lv = &tree.levels[level];
        let child_offsets = |forest: &BasisForest| -> Vec<usize> {
            let mut off = vec![0; tree.levels[child].cubes.len()];
            for cube in &lv.cubes {
                let mut acc = 0;
                for &ch in &cube.children {
                    off[ch] = acc;
                    acc += forest.lfr(child, ch).k;
                }
            }
            off
        };
        let row_off = child_offsets(weight);
        let col_off = child_offsets(source);
        let mut stacked: Vec<Vec<Array2<c64>>> = (0..lv.cubes.len())
            .map(|c| {
                lv.near[c]
                    .iter()
                    .map(|&b| Array2::zeros((weight.lfr(level, c).n, source.lfr(level, b).n)))
                    .collect()
            })
            .collect();
        let mut place = |c: usize, b: usize, blk: &Array2<c64>| -> Result<()> {
            let pc = tree.cube(child, c).parent.expect("child has a parent");
            let pb = tree.cube(child, b).parent.expect("child has a parent");
            let jb = lv.near[pc]
                .binary_search(&pb)
                .map_err(|_| Error::internal("child pair outside the parent near field"))?;
            let (r0, c0) = (row_off[c], col_off[b]);
            let (m, n) = blk.dim();
            stacked[pc][jb].slice_mut(s![r0..r0 + m, c0..c0 + n]).assign(blk);
            Ok(())
        };
        for (c, list) in carry.iter().enumerate() {
            for (&b, blk) in tree.near_field(child, c).iter().zip(list) {
                place(c, b, blk)?;
            }
        }
        lfr_interactions(&ctx, child, |c, j, blk| {
            place(c, tree.interaction_field(child, c)[j].cube, &blk)
        })?;
        let out = par::map_range(lv.cubes.len(), |c| -> Result<(Vec<StoredBlock>, Vec<Array2<c64>>)> {
            let mut stored = Vec::new();
            let mut next = Vec::new();
            for (&b, s_blk) in lv.near[c].iter().zip(&stacked[c]) {
                let t = transform_block(weight.lfr(level, c), s_blk, source.lfr(level, b))?;
                next.push(split_and_store(&ctx, level, c, b, t, &mut stored));
            }
            Ok((stored, next))
        });
        carry = Vec::with_capacity(out.len());
        for r in out {
            let (stored, cr) = r?;
            blocks.extend(stored);
            carry.push(cr);
        }
    }

    // Coarsest low-frequency level: near and interaction scaling blocks.
    let h_l = tree.h_l;
    let mut ni: Vec<StoredBlock> = Vec::new();
    let ni_tag = |c: usize, b: usize| BlockTag {
        level: h_l,
        target: c,
        kind: BlockKind::NiPhiPhi,
        target_cone: None,
        source: b,
        source_cone: None,
    };
    let mut pending: Vec<(BlockTag, Array2<c64>)> = Vec::new();
    for (c, list) in carry.into_iter().enumerate() {
        for (&b, blk) in tree.near_field(h_l, c).iter().zip(list) {
            pending.push((ni_tag(c, b), blk));
        }
    }
    lfr_interactions(&ctx, h_l, |c, j, blk| {
        pending.push((ni_tag(c, tree.interaction_field(h_l, c)[j].cube), blk));
        Ok(())
    })?;
    pending.retain(|(_, b)| !b.is_empty());
    ni.extend(par::map(&pending, |(tag, b)| compress_block(*tag, b.clone(), epsilon)));
    blocks.extend(ni);

    // Directional levels.
    for level in tree.h..h_l {
        blocks.extend(hfr_level(&ctx, level)?);
    }

    blocks.sort_by_key(|b| b.tag);
    Ok(NonstandardMatrix { blocks })
}

/// Cone directions of the two cubes of a pair with lattice offset `off`
/// from target to source.
pub fn pair_cones(class: u32, off: &[i64; 3]) -> (ConeId, ConeId) {
    let d = [off[0] as f64, off[1] as f64, off[2] as f64];
    let back = [-d[0], -d[1], -d[2]];
    (cone_of_direction(class, &d), cone_of_direction(class, &back))
}

fn hfr_level(ctx: &Context<'_>, level: usize) -> Result<Vec<StoredBlock>> {
    let tree = ctx.tree;
    let w = tree.levels[level].width;
    let class = tree.width_class(level);
    let g = InterpolationGrid::new(ctx.source.orders.high, [0.0; 3], w)?;
    let mut out = Vec::new();
    for (off, pairs) in group_by_offset(tree, level) {
        let (gc, gb) = pair_cones(class, &off);
        let (uc, ub) = (cone_direction(&gc), cone_direction(&gb));
        let delta = [-(off[0] as f64) * w, -(off[1] as f64) * w, -(off[2] as f64) * w];
        let d = m2l_relative(ctx.spec.kappa, &g, Some(&uc), &g, Some(&ub), &delta)?;
        let blocks = par::map(&pairs, |&(c, j)| -> Result<StoredBlock> {
            let it = tree.interaction_field(level, c)[j];
            if it.cone != Some(gc) {
                return Err(Error::internal("interaction cone tag disagrees with its offset"));
            }
            let b = it.cube;
            let sw = ctx.weight.hfr(level, c, &gc)?;
            let ss = ctx.source.hfr(level, b, &gb)?;
            let phase = m2l_phase(
                ctx.spec.kappa,
                &tree.cube(level, c).center,
                Some(&uc),
                &tree.cube(level, b).center,
                Some(&ub),
            );
            let blk = sw.scaling_moments.t().dot(&d).dot(&ss.scaling_moments) * phase;
            let tag = BlockTag {
                level,
                target: c,
                kind: BlockKind::HfrConePhiPhi,
                target_cone: Some(gc),
                source: b,
                source_cone: Some(gb),
            };
            Ok(compress_block(tag, blk, ctx.epsilon))
        });
        for r in blocks {
            let blk = r?;
            if blk.rows > 0 && blk.cols > 0 {
                out.push(blk);
            }
        }
    }
    Ok(out)
}

/// Worst factorization error over sampled interaction pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct FactorizationAudit {
    pub pairs: usize,
    /// Largest `max |T D S − K| / max |K|` over the sampled point pairs of
    /// one cube pair.
    pub max_relative_error: f64,
}

/// Compares `T D S` with direct kernel values on up to `max_pairs`
/// interaction pairs from every level, `samples` point pairs each.
pub fn factorization_audit(
    tree: &Tree,
    points: &PointSet,
    spec: &KernelSpec,
    orders: Orders,
    max_pairs: usize,
    samples: usize,
    seed: u64,
) -> Result<FactorizationAudit> {
    let mut all = Vec::new();
    for level in tree.h..tree.levels.len() {
        for c in 0..tree.levels[level].cubes.len() {
            for j in 0..tree.interaction_field(level, c).len() {
                all.push((level, c, j));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<_> = all.choose_multiple(&mut rng, max_pairs).copied().collect();
    let mut audit = FactorizationAudit::default();
    for (level, c, j) in picked {
        let b = tree.interaction_field(level, c)[j].cube;
        let (cc, cb) = (tree.cube(level, c), tree.cube(level, b));
        let (uc, ub, order) = if level < tree.h_l {
            let (gc, gb) = pair_cones(tree.width_class(level), &tree.offset(level, c, b));
            (Some(cone_direction(&gc)), Some(cone_direction(&gb)), orders.high)
        } else {
            (None, None, orders.low)
        };
        let tg = InterpolationGrid::new(order, cc.center, cc.width)?;
        let sg = InterpolationGrid::new(order, cb.center, cb.width)?;
        let xs = tree.cube_points(level, c);
        let ys = tree.cube_points(level, b);
        let pairs: Vec<(usize, usize)> = (0..samples)
            .map(|_| (*xs.choose(&mut rng).expect("cube has points"), *ys.choose(&mut rng).expect("cube has points")))
            .collect();
        let ti: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let si: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let t = l2t(spec, &tg, uc.as_ref(), points, &ti)?;
        let d = m2l(spec.kappa, &tg, uc.as_ref(), &sg, ub.as_ref())?;
        let sm = s2m(spec, &sg, ub.as_ref(), points, &si)?;
        let td = t.dot(&d);
        let (mut err, mut scale) = (0.0f64, 0.0f64);
        for (k, &(x, y)) in pairs.iter().enumerate() {
            let approx: c64 = td.row(k).iter().zip(sm.column(k)).map(|(a, b)| a * b).sum();
            let pos = points.positions();
            let exact = eval_kernel(spec, &pos[x], &pos[y], points.normal(x), points.normal(y))?;
            err = err.max((approx - exact).norm());
            scale = scale.max(exact.norm());
        }
        if scale > 0.0 {
            audit.max_relative_error = audit.max_relative_error.max(err / scale);
        }
        audit.pairs += 1;
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tag() -> BlockTag {
        BlockTag {
            level: 0,
            target: 0,
            kind: BlockKind::NiPhiPhi,
            target_cone: None,
            source: 0,
            source_cone: None,
        }
    }

    #[test]
    fn diagonal_block_sparsifies() {
        let mut b = Array2::from_elem((2, 2), c64::new(1e-9, 0.0));
        b[[0, 0]] = c64::new(1.0, 0.0);
        b[[1, 1]] = c64::new(1.0, 0.0);
        let s = compress_block(tag(), b, 1e-3);
        assert!(!s.is_dense());
        assert_eq!(s.nnz(), 2);
        assert!(s.compression_error.unwrap() <= 1e-3);
    }

    #[test]
    fn uniform_block_stays_dense() {
        let b = Array2::from_elem((3, 4), c64::new(0.5, -0.5));
        let s = compress_block(tag(), b.clone(), 1e-3);
        assert!(s.is_dense());
        assert_eq!(s.to_dense(), b);
        assert_eq!(s.compression_error, None);
    }

    #[test]
    fn zero_block_is_empty_sparse() {
        let s = compress_block(tag(), Array2::zeros((3, 3)), 1e-3);
        assert_eq!(s.nnz(), 0);
        assert!(!s.is_dense());
    }

    #[test]
    fn random_block_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for trial in 0..20 {
            // Entries spread over many orders of magnitude so that a good
            // share falls below the threshold.
            let b = Array2::from_shape_fn((50, 50), |_| {
                let mag = 10f64.powf(rng.random_range(-7.0..0.0));
                c64::from_polar(mag, rng.random_range(0.0..std::f64::consts::TAU))
            });
            let s = compress_block(tag(), b.clone(), 1e-3);
            let diff = &b - &s.to_dense();
            let ratio = norm1(&diff) / norm1(&b);
            assert!(ratio <= 1e-3, "trial {trial}: {ratio}");
            if let Some(r) = s.compression_error {
                assert!((r - ratio).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn stats() {
        let m = NonstandardMatrix::default();
        let s = m.stats(0);
        assert_eq!((s.nnz_total, s.bytes_blocks, s.bytes_q), (0, 0, 0));
        let m = NonstandardMatrix {
            blocks: vec![compress_block(tag(), Array2::from_elem((2, 3), c64::new(1.0, 0.0)), 1e-3)],
        };
        let s = m.stats(0);
        assert_eq!(s.nnz_total, 6);
        assert_eq!(s.bytes_blocks, 96);
    }

    #[test]
    fn apply_matches_dense_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let b = Array2::from_shape_fn((4, 3), |(i, j)| {
            if i == j { c64::new(1.0, 0.5) } else { c64::new(rng.random::<f64>() * 1e-8, 0.0) }
        });
        let x = vec![c64::new(1.0, 2.0), c64::new(-1.0, 0.0), c64::new(0.5, 0.5)];
        for blk in [compress_block(tag(), b.clone(), 1e-3), compress_block(tag(), b.clone(), 1e-12)] {
            let mut y = vec![c64::new(0.0, 0.0); 4];
            blk.apply_into(&x, &mut y);
            let dense = blk.to_dense().dot(&ndarray::arr1(&x));
            for (a, d) in y.iter().zip(dense.iter()) {
                assert!((a - d).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn binary_round_trip() {
        let mut b = Array2::from_elem((3, 3), c64::new(1e-9, 0.0));
        b[[1, 2]] = c64::new(2.0, -1.0);
        let mut t2 = tag();
        t2.kind = BlockKind::HfrConePhiPhi;
        t2.target_cone = Some(ConeId { class: 1, face: 3, i: 2, j: 7 });
        t2.source_cone = Some(ConeId { class: 1, face: 2, i: 5, j: 0 });
        let m = NonstandardMatrix {
            blocks: vec![
                compress_block(tag(), Array2::from_elem((2, 2), c64::new(1.0, 1.0)), 1e-3),
                compress_block(t2, b, 1e-3),
            ],
        };
        let mut buf = Vec::new();
        m.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..6], b"CBMNS1");
        let back = NonstandardMatrix::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back.blocks.len(), 2);
        for (a, b) in m.blocks.iter().zip(&back.blocks) {
            assert_eq!(a.tag, b.tag);
            assert_eq!(a.payload, b.payload);
        }
        assert!(NonstandardMatrix::read_binary(&mut &b"garbage"[..]).is_err());
    }
}
