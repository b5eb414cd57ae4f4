use nalgebra::{Matrix3, Vector2};

use super::{PixelPair, SolverError};
use crate::geometry::{skew, Mat3, SE3Pose, Vec3};
use crate::numerics;

/// Essential matrix with the convention `x_b^T E x_a = 0`, where
/// `X_b = R X_a + t` and `E = [t]x R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(pub Mat3);

impl EssentialMatrix {
    pub fn from_pose(relative: &SE3Pose) -> Self {
        EssentialMatrix(skew(&relative.translation) * relative.rotation)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    /// Closest matrix with singular values (1, 1, 0).
    pub fn projected(&self) -> Self {
        let svd = self.0.svd(true, true);
        match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => {
                let mut s = svd.singular_values;
                let mut idx = [0usize, 1, 2];
                idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
                s[idx[0]] = 1.0;
                s[idx[1]] = 1.0;
                s[idx[2]] = 0.0;
                EssentialMatrix(u * Matrix3::from_diagonal(&s) * v_t)
            }
            _ => *self,
        }
    }

    /// Residual of the cubic trace constraint `2 E E^T E - tr(E E^T) E`
    /// (max-abs, for a unit-Frobenius `E`).
    pub fn trace_constraint_residual(&self) -> f64 {
        let e = self.0 / self.0.norm();
        let eet = e * e.transpose();
        (2.0 * eet * e - eet.trace() * e).amax()
    }

    pub fn algebraic_residual(&self, pair: &PixelPair) -> f64 {
        pair.hom_b().dot(&(self.0 * pair.hom_a()))
    }
}

/// First-order geometric distance to the epipolar constraint, in normalized
/// image units.
pub fn sampson_distance(e: &Mat3, xa: &Vector2<f64>, xb: &Vector2<f64>) -> f64 {
    let a = Vec3::new(xa.x, xa.y, 1.0);
    let b = Vec3::new(xb.x, xb.y, 1.0);
    let ea = e * a;
    let etb = e.transpose() * b;
    let num = b.dot(&ea);
    let den = ea.x * ea.x + ea.y * ea.y + etb.x * etb.x + etb.y * etb.y;
    if den < numerics::SAMPSON_EPS {
        return num.abs();
    }
    num.abs() / den.sqrt()
}

/// Depths of the two-view midpoint triangulation of unit rays `da` (frame a)
/// and `db` (frame b) under `X_b = R X_a + t`.
pub(crate) fn two_view_depths(rotation: &Mat3, translation: &Vec3, da: &Vec3, db: &Vec3) -> Option<(f64, f64)> {
    // Solve s_a R da - s_b db = -t in the least-squares sense.
    let u = rotation * da;
    let m = nalgebra::Matrix3x2::from_columns(&[u, -db]);
    let mtm = m.transpose() * m;
    let rhs = m.transpose() * (-translation);
    let sol = mtm.try_inverse()? * rhs;
    Some((sol[0], sol[1]))
}

/// Resolves the four-fold ambiguity of `E` by cheirality voting.
/// The returned pose maps frame a into frame b and has unit translation.
pub fn decompose_essential(e: &EssentialMatrix, pairs: &[PixelPair]) -> Result<SE3Pose, SolverError> {
    if pairs.is_empty() {
        return Err(SolverError::InvalidInput("no correspondences"));
    }
    let svd = e.0.svd(true, true);
    let (mut u, mut v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v)) => (u, v),
        _ => return Err(SolverError::NumericalFailure("SVD failed")),
    };
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    u = Mat3::from_columns(&[u.column(idx[0]), u.column(idx[1]), u.column(idx[2])]);
    v_t = Mat3::from_rows(&[v_t.row(idx[0]), v_t.row(idx[1]), v_t.row(idx[2])]);
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t = u.column(2).into_owned();
    let candidates = [
        (u * w * v_t, t),
        (u * w * v_t, -t),
        (u * w.transpose() * v_t, t),
        (u * w.transpose() * v_t, -t),
    ];
    let rays: Vec<(Vec3, Vec3)> = pairs.iter().map(|p| (p.hom_a().normalize(), p.hom_b().normalize())).collect();
    let mut best: Option<(usize, usize)> = None;
    for (k, (r, t)) in candidates.iter().enumerate() {
        let votes = rays
            .iter()
            .filter(|(da, db)| matches!(two_view_depths(r, t, da, db), Some((sa, sb)) if sa > 0.0 && sb > 0.0))
            .count();
        if best.is_none_or(|(_, v)| votes > v) {
            best = Some((k, votes));
        }
    }
    let (k, votes) = best.unwrap();
    if 2 * votes < rays.len() || votes == 0 {
        return Err(SolverError::NoParallax);
    }
    let (r, t) = candidates[k];
    let mut parallax: Vec<f64> = rays
        .iter()
        .filter(|(da, db)| matches!(two_view_depths(&r, &t, da, db), Some((sa, sb)) if sa > 0.0 && sb > 0.0))
        .map(|(da, db)| (r * da).cross(db).norm().atan2((r * da).dot(db)))
        .collect();
    parallax.sort_by(f64::total_cmp);
    if parallax[parallax.len() / 2] < numerics::MIN_PARALLAX {
        return Err(SolverError::NoParallax);
    }
    Ok(SE3Pose::new(r, t.normalize()))
}
