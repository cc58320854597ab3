use super::{dist2, Point3, PointCloud};
use crate::error::{Error, Result};

/// Indices of the `k` points closest to `query`, nearest first; equal
/// distances keep the lower index first. `k` is clamped to the point count.
pub fn knn_indices(points: &[Point3], query: &Point3, k: usize) -> Vec<usize> {
    let k = k.min(points.len());
    if k == 0 {
        return Vec::new();
    }
    let mut keyed: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (dist2(p, query), i)).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, cmp);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(cmp);
    keyed.into_iter().map(|(_, i)| i).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnSelection {
    pub cloud: PointCloud,
    pub indices: Vec<usize>,
    /// Set when `k` exceeded the cloud size and was reduced to it.
    pub clamped: bool,
}

/// The `k` cloud points nearest to `query`.
pub fn knn_select(cloud: &PointCloud, query: &Point3, k: usize) -> Result<KnnSelection> {
    if cloud.is_empty() {
        return Err(Error::InvalidInput("knn on an empty cloud".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("knn needs k >= 1".into()));
    }
    let clamped = k > cloud.len();
    let indices = knn_indices(cloud.points(), query, k);
    Ok(KnnSelection {
        cloud: cloud.select(&indices),
        indices,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
    }

    #[test]
    fn k_equal_n_returns_whole_cloud() {
        let pts = random_cloud(40, 1);
        let cloud = PointCloud::new(pts).unwrap();
        let sel = knn_select(&cloud, &[5.0, 5.0, 5.0], 40).unwrap();
        let mut idx = sel.indices.clone();
        idx.sort();
        assert_eq!(idx, (0..40).collect::<Vec<_>>());
        assert!(!sel.clamped);
    }

    #[test]
    fn query_on_point_returns_it() {
        let pts = random_cloud(100, 2);
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let sel = knn_select(&cloud, &pts[37], 1).unwrap();
        assert_eq!(sel.indices, vec![37]);
        assert_eq!(sel.cloud.points()[0], pts[37]);
    }

    #[test]
    fn matches_exhaustive_sort() {
        let pts = random_cloud(1000, 3);
        let q = [0.4, 0.5, 0.6];
        let mut oracle: Vec<usize> = (0..pts.len()).collect();
        oracle.sort_by(|&a, &b| dist2(&pts[a], &q).partial_cmp(&dist2(&pts[b], &q)).unwrap().then(a.cmp(&b)));
        oracle.truncate(50);
        assert_eq!(knn_indices(&pts, &q, 50), oracle);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let pts = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [3.0, 0.0, 0.0]];
        assert_eq!(knn_indices(&pts, &[0.0; 3], 2), vec![0, 1]);
    }

    #[test]
    fn oversized_k_is_clamped_and_flagged() {
        let cloud = PointCloud::new(random_cloud(5, 4)).unwrap();
        let sel = knn_select(&cloud, &[0.0; 3], 3000).unwrap();
        assert!(sel.clamped);
        assert_eq!(sel.indices.len(), 5);
    }
}
