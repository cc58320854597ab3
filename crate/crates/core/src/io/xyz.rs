use std::fs;
use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Whitespace-separated `x y z` per line; blank lines and `#` comments are
/// skipped, extra columns are ignored.
pub fn read_xyz(path: &Path) -> Result<Vec<Point3>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace().map(str::parse::<f64>);
        let mut p = [0.0; 3];
        for v in p.iter_mut() {
            *v = match it.next() {
                Some(Ok(x)) => x,
                _ => return Err(Error::format(path, format!("line {}: expected three numbers", no + 1))),
            };
        }
        points.push(p);
    }
    Ok(points)
}

/// Writes with round-trip precision (shortest representation).
pub fn write_xyz(path: &Path, points: &[Point3]) -> Result<()> {
    let mut out = String::with_capacity(points.len() * 48);
    for p in points {
        out.push_str(&format!("{:?} {:?} {:?}\n", p[0], p[1], p[2]));
    }
    write_atomic(path, out.as_bytes())
}
