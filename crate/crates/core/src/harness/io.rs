//! Point cloud ingestion from CSV and Wavefront OBJ files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kernels::PointSet;
use crate::vec3::{self, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointFormat {
    Csv,
    Obj,
}

pub fn load_points(path: &Path, format: PointFormat) -> Result<PointSet> {
    match format {
        PointFormat::Csv => load_csv(path),
        PointFormat::Obj => load_obj(path),
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        message: message.into(),
    }
}

fn parse_finite(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_error(path, line, format!("`{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(path, line, format!("non-finite value `{field}`")));
    }
    Ok(v)
}

fn finish(path: &Path, positions: Vec<Vec3>, normals: Option<Vec<Vec3>>) -> Result<PointSet> {
    if positions.is_empty() {
        return Err(parse_error(path, 0, "no points"));
    }
    let set = PointSet::new(positions)?;
    match normals {
        Some(n) => set.with_normals(n),
        None => Ok(set),
    }
}

/// Rows `x,y,z` or `x,y,z,nx,ny,nz`; normals are rescaled to unit length.
/// Blank lines and lines starting with `#` are skipped.
fn load_csv(path: &Path) -> Result<PointSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut positions = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 3 && record.len() != 6 {
            return Err(parse_error(path, line, format!("expected 3 or 6 columns, got {}", record.len())));
        }
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(parse_error(path, line, "rows mix 3 and 6 columns"));
        }
        let v: Vec<f64> = record
            .iter()
            .map(|f| parse_finite(path, line, f))
            .collect::<Result<_>>()?;
        positions.push([v[0], v[1], v[2]]);
        if v.len() == 6 {
            let n = vec3::unit(&[v[3], v[4], v[5]]).ok_or_else(|| parse_error(path, line, "zero normal"))?;
            normals.push(n);
        }
    }
    let normals = (width == Some(6)).then_some(normals);
    finish(path, positions, normals)
}

/// Vertices become points. When the file has faces, each vertex normal is
/// the normalized average of the unit normals of the faces touching it.
fn load_obj(path: &Path) -> Result<PointSet> {
    let text = fs::read_to_string(path)?;
    let mut positions: Vec<Vec3> = Vec::new();
    let mut vertex_line = Vec::new();
    let mut faces: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut it = raw.split_whitespace();
        match it.next() {
            Some("v") => {
                let v: Vec<f64> = it.take(3).map(|f| parse_finite(path, line, f)).collect::<Result<_>>()?;
                if v.len() != 3 {
                    return Err(parse_error(path, line, "vertex needs three coordinates"));
                }
                positions.push([v[0], v[1], v[2]]);
                vertex_line.push(line);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let k: i64 = head
                        .parse()
                        .map_err(|_| parse_error(path, line, format!("bad face index `{tok}`")))?;
                    // Negative indices count back from the latest vertex.
                    let resolved = if k > 0 { k - 1 } else { positions.len() as i64 + k };
                    if k == 0 || resolved < 0 || resolved >= positions.len() as i64 {
                        return Err(parse_error(path, line, format!("face index {k} out of range")));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(parse_error(path, line, "face needs at least three vertices"));
                }
                faces.push((line, idx));
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return finish(path, positions, None);
    }
    let mut acc = vec![[0.0; 3]; positions.len()];
    for (line, idx) in &faces {
        // Newell's method handles non-planar and non-convex polygons.
        let mut n = [0.0; 3];
        for (a, b) in idx.iter().zip(idx.iter().cycle().skip(1)) {
            let (p, q) = (positions[*a], positions[*b]);
            n[0] += (p[1] - q[1]) * (p[2] + q[2]);
            n[1] += (p[2] - q[2]) * (p[0] + q[0]);
            n[2] += (p[0] - q[0]) * (p[1] + q[1]);
        }
        let n = vec3::unit(&n).ok_or_else(|| parse_error(path, *line, "degenerate face"))?;
        for &v in idx {
            acc[v] = vec3::add(&acc[v], &n);
        }
    }
    let normals = acc
        .iter()
        .zip(&vertex_line)
        .map(|(n, &line)| vec3::unit(n).ok_or_else(|| parse_error(path, line, "vertex has no usable face normal")))
        .collect::<Result<Vec<_>>>()?;
    finish(path, positions, Some(normals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_normal_is_normalized() {
        let f = file("0,0,1,0,0,2\n", ".csv");
        let p = load_points(f.path(), PointFormat::Csv).unwrap();
        assert_eq!(p.positions(), &[[0.0, 0.0, 1.0]]);
        assert_eq!(p.normals().unwrap(), &[[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn csv_without_normals() {
        let f = file("# header\n1,2,3\n\n4, 5, 6\n", ".csv");
        let p = load_points(f.path(), PointFormat::Csv).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p.normals().is_none());
    }

    #[test]
    fn csv_errors_carry_lines() {
        for (text, line) in [("0,0,0\n1,nan,0\n", 2), ("0,0,0\n0,0,1\n1,1,1,0,0,1\n", 3), ("0,0,0\nx,1,2\n", 2), ("1,2\n", 1), ("0,0,0,0,0,0\n", 1)] {
            let f = file(text, ".csv");
            match load_points(f.path(), PointFormat::Csv) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        assert!(load_points(file("", ".csv").path(), PointFormat::Csv).is_err());
        assert!(load_points(Path::new("/nonexistent/p.csv"), PointFormat::Csv).is_err());
    }

    #[test]
    fn obj_cube_vertex_normals() {
        let cube = "\
v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1
f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 3 4 8 7\nf 2 3 7 6\nf 1 5 8 4\n";
        let p = load_points(file(cube, ".obj").path(), PointFormat::Obj).unwrap();
        assert_eq!(p.len(), 8);
        let s = 1.0 / 3f64.sqrt();
        for (x, n) in p.positions().iter().zip(p.normals().unwrap()) {
            for k in 0..3 {
                let expected = if x[k] > 0.5 { s } else { -s };
                assert!((n[k] - expected).abs() < 1e-15, "{x:?} {n:?}");
            }
        }
    }

    #[test]
    fn obj_variants_and_errors() {
        let p = load_points(file("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3/1/1 -2/2/2 -1/3/3\n", ".obj").path(), PointFormat::Obj).unwrap();
        assert_eq!(p.normals().unwrap()[0], [0.0, 0.0, 1.0]);
        let bare = load_points(file("v 0 0 0\nv 1 2 3\n", ".obj").path(), PointFormat::Obj).unwrap();
        assert!(bare.normals().is_none());
        for (text, line) in [("v 0 0\n", 1), ("v 0 0 0\nf 1 2 3\n", 2), ("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n", 4), ("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 5 5 5\nf 1 2 3\n", 4)] {
            match load_points(file(text, ".obj").path(), PointFormat::Obj) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        assert!(load_points(file("", ".obj").path(), PointFormat::Obj).is_err());
    }
}
