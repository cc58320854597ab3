use std::fs;
use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::geometry::Mesh;

/// Reads `v` and `f` records. Faces may use `v/vt/vn` references and
/// negative (relative) indices; polygons are fan-triangulated.
pub fn read_obj(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let bad = |d: &str| Error::format(path, format!("line {}: {d}", no + 1));
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for v in p.iter_mut() {
                    *v = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad("vertex needs three coordinates"))?;
                }
                vertices.push(p);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| bad("bad face index"))?;
                    let resolved = match i {
                        0 => return Err(bad("face index 0 is invalid")),
                        i if i > 0 => i - 1,
                        i => vertices.len() as i64 + i,
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(bad("face index out of range"));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(bad("face needs at least three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_obj(path: &Path, mesh: &Mesh) -> Result<()> {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {:?} {:?} {:?}\n", v[0], v[1], v[2]));
    }
    for f in &mesh.faces {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    write_atomic(path, out.as_bytes())
}
