use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mesh, Point3};
use crate::error::{Error, Result};

/// Uniform surface samples of a triangle mesh, deterministic in `seed`.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<Vec<Point3>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_surface_with_faces(mesh, n, &mut rng)?.0)
}

/// Uniform surface samples together with the face each one came from. Faces
/// are drawn in proportion to their area and points use square-root
/// barycentric coordinates.
pub fn sample_surface_with_faces<R: Rng + ?Sized>(
    mesh: &Mesh,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<Point3>, Vec<usize>)> {
    mesh.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("surface sampling needs n >= 1".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::InvalidInput("mesh has zero surface area".into()));
    }
    let mut points = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen::<f64>() * total;
        let f = cumulative.partition_point(|&c| c <= u).min(mesh.faces.len() - 1);
        let [a, b, c] = mesh.faces[f].map(|i| mesh.vertices[i]);
        let r1: f64 = rng.gen::<f64>().sqrt();
        let r2: f64 = rng.gen();
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        points.push([0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k]));
        faces.push(f);
    }
    Ok((points, faces))
}
