//! Hierarchical partition of the unit sphere into directional cones.
//!
//! Directions are centrally projected onto the faces of the cube
//! `[-1, 1]³`; each face carries a `4·2^k × 4·2^k` grid at width class `k`.
//! A class-`k` cell is the union of four class-`(k+1)` cells, so cones nest
//! exactly.

use serde::Serialize;

use crate::vec3::{self, Vec3};

/// A cell of the cubed-sphere grid at one width class.
///
/// `face = 2·axis + (1 if the axis component is negative)`, so faces are
/// ordered `+x, −x, +y, −y, +z, −z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ConeId {
    pub class: u32,
    pub face: u8,
    pub i: u32,
    pub j: u32,
}

/// Grid cells along one face edge at width class `k`.
pub fn cells_per_edge(class: u32) -> u32 {
    4 << class
}

/// Number of cones at width class `k`: `6·(4·2^k)² = 96·4^k`.
pub fn cone_count(class: u32) -> u64 {
    96u64 << (2 * class)
}

/// Width class `⌊log₂(w/λ)⌋` of a high-frequency cube, clamped at zero.
pub fn width_class(width: f64, wavelength: f64) -> u32 {
    let ratio = width / wavelength;
    // Tree widths are exact powers of two times the root width; a relative
    // nudge keeps ratios such as 0.999999999 · 2^k in class k.
    let k = (ratio.log2() + 1e-9).floor();
    if k <= 0.0 {
        0
    } else {
        k as u32
    }
}

fn face_axes(face: u8) -> (usize, usize, usize, f64) {
    let axis = (face / 2) as usize;
    let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
    let (o1, o2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    (axis, o1, o2, sign)
}

/// Grid cell of tangent coordinate `t ∈ [−1, 1]`; exact boundaries go to
/// the lower cell.
fn cell_of(t: f64, n: u32) -> u32 {
    let s = (t + 1.0) * f64::from(n) / 2.0;
    let mut c = s.floor();
    if c == s && c > 0.0 {
        c -= 1.0;
    }
    c.clamp(0.0, f64::from(n - 1)) as u32
}

/// The cone of class `k` containing `dir`. `dir` need not be normalised but
/// must be nonzero.
///
/// Ties between faces go to the smallest face index and ties on cell
/// boundaries to the smaller cell, which is the lexicographically smallest
/// `(face, i, j)`.
pub fn cone_of_direction(class: u32, dir: &Vec3) -> ConeId {
    let mut axis = 0;
    for a in 1..3 {
        if dir[a].abs() > dir[axis].abs() {
            axis = a;
        }
    }
    // Among tied axes the positive face of the smaller axis wins already;
    // a negative component on a smaller axis still has a smaller face index
    // than any face of a larger axis.
    let face = (2 * axis + usize::from(dir[axis] < 0.0)) as u8;
    let (_, o1, o2, _) = face_axes(face);
    let m = dir[axis].abs();
    let n = cells_per_edge(class);
    ConeId {
        class,
        face,
        i: cell_of(dir[o1] / m, n),
        j: cell_of(dir[o2] / m, n),
    }
}

/// The class-`(k−1)` cone containing this one, or `None` at class 0.
pub fn enclosing_cone(cone: &ConeId) -> Option<ConeId> {
    (cone.class > 0).then(|| ConeId {
        class: cone.class - 1,
        face: cone.face,
        i: cone.i / 2,
        j: cone.j / 2,
    })
}

fn tangent_to_direction(face: u8, t1: f64, t2: f64) -> Vec3 {
    let (axis, o1, o2, sign) = face_axes(face);
    let mut d = [0.0; 3];
    d[axis] = sign;
    d[o1] = t1;
    d[o2] = t2;
    vec3::unit(&d).expect("face direction is nonzero")
}

/// Unit direction through the centre of the cone's face patch.
pub fn cone_direction(cone: &ConeId) -> Vec3 {
    let half = f64::from(cells_per_edge(cone.class)) / 2.0;
    let t1 = (f64::from(cone.i) + 0.5) / half - 1.0;
    let t2 = (f64::from(cone.j) + 0.5) / half - 1.0;
    tangent_to_direction(cone.face, t1, t2)
}

/// Unit directions through the four corners of the cone's face patch.
pub fn cone_corners(cone: &ConeId) -> [Vec3; 4] {
    let half = f64::from(cells_per_edge(cone.class)) / 2.0;
    let a1 = f64::from(cone.i) / half - 1.0;
    let b1 = f64::from(cone.i + 1) / half - 1.0;
    let a2 = f64::from(cone.j) / half - 1.0;
    let b2 = f64::from(cone.j + 1) / half - 1.0;
    [
        tangent_to_direction(cone.face, a1, a2),
        tangent_to_direction(cone.face, b1, a2),
        tangent_to_direction(cone.face, a1, b2),
        tangent_to_direction(cone.face, b1, b2),
    ]
}

/// Largest angle between the patch centre and a patch corner. Patches are
/// convex spherical quadrilaterals, so this bounds every direction in the
/// patch.
pub fn angular_radius(cone: &ConeId) -> f64 {
    let c = cone_direction(cone);
    cone_corners(cone)
        .iter()
        .map(|d| vec3::dot(&c, d).clamp(-1.0, 1.0).acos())
        .fold(0.0, f64::max)
}

/// Every cone of a class in `(face, i, j)` order, with its direction.
pub fn cone_table(class: u32) -> Vec<(ConeId, Vec3)> {
    let n = cells_per_edge(class);
    let mut out = Vec::with_capacity(cone_count(class) as usize);
    for face in 0..6u8 {
        for i in 0..n {
            for j in 0..n {
                let id = ConeId { class, face, i, j };
                out.push((id, cone_direction(&id)));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plus_z_at_class_zero() {
        let c = cone_of_direction(0, &[0.0, 0.0, 1.0]);
        assert_eq!(c, ConeId { class: 0, face: 4, i: 1, j: 1 });
    }

    #[test]
    fn face_ties_go_to_the_smallest_face() {
        assert_eq!(cone_of_direction(0, &[1.0, 1.0, 0.0]).face, 0);
        assert_eq!(cone_of_direction(0, &[-1.0, 1.0, 1.0]).face, 1);
        assert_eq!(cone_of_direction(0, &[0.0, -1.0, -1.0]).face, 3);
    }

    #[test]
    fn table_sizes() {
        assert_eq!(cone_table(0).len(), 96);
        assert_eq!(cone_table(1).len(), 384);
        assert_eq!(cone_count(0), 96);
        assert_eq!(cone_count(1), 384);
        assert_eq!(cone_count(2), 1536);
    }

    #[test]
    fn every_cone_direction_maps_back_to_itself() {
        for class in 0..3 {
            for (id, d) in cone_table(class) {
                assert_eq!(cone_of_direction(class, &d), id);
                assert!((vec3::norm(&d) - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn width_classes() {
        assert_eq!(width_class(1.0, 1.0), 0);
        assert_eq!(width_class(1.999, 1.0), 0);
        assert_eq!(width_class(2.0, 1.0), 1);
        assert_eq!(width_class(0.5, 0.125), 2);
    }

    #[test]
    fn class_zero_patches_are_narrower_than_a_radian() {
        for (id, _) in cone_table(0) {
            assert!(angular_radius(&id) < 0.5);
        }
    }

    /// Child patches sampled on a fine grid must map into the parent patch.
    #[test]
    fn nesting_by_sampling() {
        for (child, _) in cone_table(1) {
            let parent = enclosing_cone(&child).unwrap();
            let half = f64::from(cells_per_edge(1)) / 2.0;
            for a in 0..10 {
                for b in 0..10 {
                    let t1 = (f64::from(child.i) + (f64::from(a) + 0.5) / 10.0) / half - 1.0;
                    let t2 = (f64::from(child.j) + (f64::from(b) + 0.5) / 10.0) / half - 1.0;
                    let d = tangent_to_direction(child.face, t1, t2);
                    assert_eq!(cone_of_direction(1, &d), child);
                    assert_eq!(cone_of_direction(0, &d), parent);
                }
            }
        }
    }

    fn direction() -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-1.0f64..1.0)
            .prop_filter("nonzero", |v| vec3::norm(v) > 1e-3)
            .prop_map(|v| vec3::unit(&v).unwrap())
    }

    proptest! {
        #[test]
        fn enclosing_matches_coarser_lookup(d in direction(), k in 0u32..5) {
            let fine = cone_of_direction(k + 1, &d);
            prop_assert_eq!(enclosing_cone(&fine).unwrap(), cone_of_direction(k, &d));
        }

        #[test]
        fn direction_lies_within_its_patch(d in direction(), k in 0u32..4) {
            let c = cone_of_direction(k, &d);
            let angle = vec3::dot(&d, &cone_direction(&c)).clamp(-1.0, 1.0).acos();
            prop_assert!(angle <= angular_radius(&c) + 1e-12);
        }
    }
}
