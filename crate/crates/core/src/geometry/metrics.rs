use super::{dist2, Point3};
use crate::error::{Error, Result};

/// Bidirectional Chamfer distance: mean nearest-neighbour Euclidean distance
/// from `a` to `b` plus the mean from `b` to `a`.
pub fn chamfer_distance(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("chamfer distance of an empty set".into()));
    }
    Ok(mean_nearest(a, b) + mean_nearest(b, a))
}

/// Mean over `from` of the distance to the nearest point of `to`. `to` is
/// sorted along x so each query only scans the slab that can still improve.
fn mean_nearest(from: &[Point3], to: &[Point3]) -> f64 {
    let mut sorted: Vec<Point3> = to.to_vec();
    sorted.sort_by(|p, q| p[0].total_cmp(&q[0]));
    let xs: Vec<f64> = sorted.iter().map(|p| p[0]).collect();
    let mut total = 0.0;
    for p in from {
        let start = xs.partition_point(|&x| x < p[0]);
        let mut best = f64::INFINITY;
        for q in sorted[start..].iter() {
            let dx = q[0] - p[0];
            if dx * dx > best {
                break;
            }
            best = best.min(dist2(p, q));
        }
        for q in sorted[..start].iter().rev() {
            let dx = p[0] - q[0];
            if dx * dx > best {
                break;
            }
            best = best.min(dist2(p, q));
        }
        total += best.sqrt();
    }
    total / from.len() as f64
}

/// Frobenius norm of the difference between two ordered, equal-size sets.
pub fn v2v_error(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "v2v error needs equal counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(p, q)| dist2(p, q)).sum::<f64>().sqrt())
}
