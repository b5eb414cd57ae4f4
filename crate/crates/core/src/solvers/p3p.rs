//! Central three-point absolute pose via Grunert's quartic.

use super::{check_not_collinear, poly, push_candidate, RayPointCorrespondence, SolverError};
use crate::geometry::SE3Pose;

/// Camera-from-world poses consistent with three rays sharing one origin.
pub fn solve_p3p(corrs: &[RayPointCorrespondence; 3]) -> Result<Vec<SE3Pose>, SolverError> {
    let origin = corrs[0].ray.origin;
    if corrs.iter().any(|c| (c.ray.origin - origin).norm() > 1e-12 * (1.0 + origin.norm())) {
        return Err(SolverError::InvalidInput("rays must share one origin"));
    }
    check_not_collinear([&corrs[0].point, &corrs[1].point, &corrs[2].point])?;
    let d = [corrs[0].ray.direction, corrs[1].ray.direction, corrs[2].ray.direction];
    let cos_alpha = d[1].dot(&d[2]);
    let cos_beta = d[0].dot(&d[2]);
    let cos_gamma = d[0].dot(&d[1]);
    let a2 = (corrs[1].point - corrs[2].point).norm_squared();
    let b2 = (corrs[0].point - corrs[2].point).norm_squared();
    let c2 = (corrs[0].point - corrs[1].point).norm_squared();

    // With s2 = u s1 and s3 = v s1, eliminating u leaves a quartic in v.
    let p = (a2 - c2) / b2;
    let q = (a2 + c2) / b2;
    let (ca, cb, cg) = (cos_alpha, cos_beta, cos_gamma);
    let a4 = (p - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca;
    let a3 = 4.0 * (p * (1.0 - p) * cb - (1.0 - q) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb);
    let a2c = 2.0
        * (p * p - 1.0 + 2.0 * p * p * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca - 4.0 * q * ca * cb * cg
            + 2.0 * (b2 - a2) / b2 * cg * cg);
    let a1 = 4.0 * (-p * (1.0 + p) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - q) * ca * cg);
    let a0 = (1.0 + p).powi(2) - 4.0 * a2 / b2 * cg * cg;

    let mut out = Vec::new();
    for v in poly::real_roots(&[a0, a1, a2c, a3, a4])? {
        if v <= 0.0 {
            continue;
        }
        let den = 2.0 * (cg - v * ca);
        if den.abs() < 1e-14 {
            continue;
        }
        let u = ((p - 1.0) * v * v - 2.0 * p * cb * v + 1.0 + p) / den;
        let s1_sq = b2 / (1.0 + v * v - 2.0 * v * cb);
        if !(s1_sq > 0.0) || u <= 0.0 {
            continue;
        }
        let s1 = s1_sq.sqrt();
        push_candidate(corrs, [s1, u * s1, v * s1], &mut out);
    }
    Ok(out)
}
