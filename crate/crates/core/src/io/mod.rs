//! Point-cloud and mesh file formats plus atomic file writes.

mod obj;
mod ply;
mod xyz;

pub use obj::{read_obj, write_obj};
pub use ply::{read_ply, write_ply, PlyData, PlyEncoding};
pub use xyz::{read_xyz, write_xyz};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Mesh, PointCloud};

/// Writes `bytes` to a temporary sibling of `path`, syncs it and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Loads a point cloud, choosing the parser from the file extension
/// (`.ply` or `.xyz`/`.txt`).
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let points = match ext.as_deref() {
        Some("ply") => read_ply(path)?.points,
        Some("xyz") | Some("txt") => read_xyz(path)?,
        _ => return Err(Error::format(path, "unknown point cloud extension (expected .ply or .xyz)")),
    };
    PointCloud::new(points).map_err(|e| Error::format(path, e.to_string()))
}

/// Loads a triangle mesh from OBJ or PLY (a PLY needs a face element).
pub fn read_mesh(path: &Path) -> Result<Mesh> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("obj") => read_obj(path),
        Some("ply") => {
            let d = read_ply(path)?;
            Mesh::new(d.points, d.faces).map_err(|e| Error::format(path, e.to_string()))
        }
        _ => Err(Error::format(path, "unknown mesh extension (expected .obj or .ply)")),
    }
}
