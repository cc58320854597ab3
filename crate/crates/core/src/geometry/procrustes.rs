use log::warn;
use nalgebra::{Matrix3, Vector3};

use super::{centroid, Point3, RigidTransform};
use crate::error::{Error, Result};

/// Relative singular-value gap below which the optimal rotation is treated
/// as non-unique.
const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub transform: RigidTransform,
    /// The source or target set is (near) collinear, so the rotation about
    /// the degenerate direction is arbitrary.
    pub non_unique: bool,
}

/// Least-squares proper rigid transform mapping `source[i]` onto `target[i]`.
pub fn procrustes_align(source: &[Point3], target: &[Point3]) -> Result<Alignment> {
    if source.len() != target.len() {
        return Err(Error::InvalidInput(format!(
            "procrustes needs corresponding sets, got {} and {} points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::InvalidInput(format!("procrustes needs at least 3 points, got {}", source.len())));
    }
    if source.iter().chain(target).any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("procrustes input".into()));
    }
    let cs = Vector3::from(centroid(source));
    let ct = Vector3::from(centroid(target));
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (Vector3::from(*s) - cs) * (Vector3::from(*t) - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut sv = svd.singular_values;
    // nalgebra does not order singular values; sort descending alongside U and V.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let u = Matrix3::from_columns(&order.map(|i| u.column(i).into_owned()));
    let v = Matrix3::from_columns(&order.map(|i| v_t.row(i).transpose()));
    sv = Vector3::new(sv[order[0]], sv[order[1]], sv[order[2]]);

    let d = (v * u.transpose()).determinant().signum();
    let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if d < 0.0 { -1.0 } else { 1.0 }));
    let rotation = v * flip * u.transpose();
    let translation = ct - rotation * cs;

    let scale = sv[0].max(f64::MIN_POSITIVE);
    // A rank-1 cross-covariance leaves rotation about one axis free; with a
    // reflection fix the smallest direction also matters when it ties.
    let non_unique = sv[1] / scale < DEGENERACY_TOL || (d < 0.0 && (sv[1] - sv[2]) / scale < DEGENERACY_TOL);
    if non_unique {
        warn!("procrustes alignment is degenerate; rotation is not unique");
    }
    Ok(Alignment {
        transform: RigidTransform::new(rotation, translation),
        non_unique,
    })
}
