//! Deterministic point-set kernels shared by the model and the evaluation
//! harness. Ties are always broken by the lowest original index.

mod fps;
mod knn;
mod metrics;
mod procrustes;
mod sampling;

pub use fps::{farthest_point_sample, farthest_point_sample_from};
pub use knn::{knn_indices, knn_select, KnnSelection};
pub use metrics::{chamfer_distance, v2v_error};
pub use procrustes::{procrustes_align, Alignment};
pub use sampling::{sample_surface, sample_surface_with_faces};

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Point3, b: &Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let mut c = [0.0; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    let n = points.len() as f64;
    c.map(|v| v / n)
}

/// Unordered set of 3D points in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    tags: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("point cloud is empty".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points, tags: None })
    }

    pub fn with_tags(mut self, tags: Vec<u32>) -> Result<Self> {
        if tags.len() != self.points.len() {
            return Err(Error::InvalidInput(format!(
                "{} tags for {} points",
                tags.len(),
                self.points.len()
            )));
        }
        self.tags = Some(tags);
        Ok(self)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn tags(&self) -> Option<&[u32]> {
        self.tags.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            tags: self.tags.as_ref().map(|t| indices.iter().map(|&i| t[i]).collect()),
        }
    }

    pub fn translated(&self, v: Point3) -> Self {
        Self {
            points: self.points.iter().map(|p| add(p, &v)).collect(),
            tags: self.tags.clone(),
        }
    }
}

/// Componentwise median; even counts take the lower-middle element.
pub fn coordinate_median(points: &[Point3]) -> Result<Point3> {
    if points.is_empty() {
        return Err(Error::InvalidInput("median of an empty point set".into()));
    }
    let mid = (points.len() - 1) / 2;
    let mut out = [0.0; 3];
    let mut axis: Vec<f64> = Vec::with_capacity(points.len());
    for (a, o) in out.iter_mut().enumerate() {
        axis.clear();
        axis.extend(points.iter().map(|p| p[a]));
        let (_, m, _) = axis.select_nth_unstable_by(mid, f64::total_cmp);
        *o = *m;
    }
    Ok(out)
}

/// Proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Point3) -> Self {
        Self::new(Matrix3::identity(), Vector3::from(t))
    }

    pub fn from_axis_angle(axis: Point3, angle: f64, t: Point3) -> Self {
        let axis = Unit::new_normalize(Vector3::from(axis));
        let r = Rotation3::from_axis_angle(&axis, angle);
        Self::new(*r.matrix(), Vector3::from(t))
    }

    /// Row-major 3x3 rotation entries.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn from_row_major(r: [f64; 9], t: Point3) -> Self {
        Self::new(Matrix3::from_row_slice(&r), Vector3::from(t))
    }

    pub fn translation_array(&self) -> Point3 {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)] * p[0] + r[(0, 1)] * p[1] + r[(0, 2)] * p[2] + t.x,
            r[(1, 0)] * p[0] + r[(1, 1)] * p[1] + r[(1, 2)] * p[2] + t.y,
            r[(2, 0)] * p[0] + r[(2, 1)] * p[1] + r[(2, 2)] * p[2] + t.z,
        ]
    }

    pub fn apply_all(&self, points: &[Point3]) -> Vec<Point3> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Max deviation of `RᵀR` from identity and of `det R` from 1.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        let rtr = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let ortho = rtr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (ortho, (self.rotation.determinant() - 1.0).abs())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let (o, d) = self.orthonormality_error();
        o <= tol && d <= tol && self.translation.iter().all(|v| v.is_finite())
    }

    /// Geodesic angle between two rotations (radians).
    pub fn rotation_angle_to(&self, other: &Self) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        // acos is ill-conditioned near 0; use the skew part there.
        let skew = Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        );
        (skew.norm() / 2.0).atan2(c)
    }
}

/// Triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::InvalidInput("mesh has no faces".into()));
        }
        let n = self.vertices.len();
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidInput(format!("face {f:?} references a vertex outside 0..{n}")));
        }
        Ok(())
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| Vector3::from(self.vertices[i]));
        (b - a).cross(&(c - a)).norm() * 0.5
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn transformed(&self, tf: &RigidTransform) -> Self {
        Self {
            vertices: tf.apply_all(&self.vertices),
            faces: self.faces.clone(),
        }
    }
}
