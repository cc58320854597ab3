use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dist2, Point3};
use crate::error::{Error, Result};

/// Greedy max-min sampling starting at a seed-chosen index.
pub fn farthest_point_sample(points: &[Point3], m: usize, seed: u64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::InvalidInput("farthest point sampling on an empty set".into()));
    }
    let start = ChaCha8Rng::seed_from_u64(seed).gen_range(0..points.len());
    farthest_point_sample_from(points, m, start)
}

/// Greedy max-min sampling from an explicit start index. Each step picks the
/// point farthest from everything chosen so far (lowest index on ties).
pub fn farthest_point_sample_from(points: &[Point3], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::InvalidInput(format!("cannot sample {m} of {n} points")));
    }
    if start >= n {
        return Err(Error::InvalidInput(format!("start index {start} out of range for {n} points")));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut nearest = vec![f64::INFINITY; n];
    let mut current = start;
    for _ in 0..m {
        chosen.push(current);
        let c = points[current];
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, &c);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if nearest[i] > best.0 {
                best = (nearest[i], i);
            }
        }
        current = best.1;
    }
    Ok(chosen)
}
