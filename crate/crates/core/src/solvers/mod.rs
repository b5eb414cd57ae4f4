//! Minimal and closed-form geometric solvers.

pub mod essential;
pub mod five_point;
pub mod gp3p;
pub mod p3p;
pub mod poly;
pub mod triangulate;

pub use essential::{decompose_essential, sampson_distance, EssentialMatrix};
pub use five_point::solve_five_point;
pub use gp3p::solve_gp3p;
pub use p3p::solve_p3p;
pub use triangulate::{triangulate_dlt, TriangulationObservation};

use nalgebra::Vector2;
use thiserror::Error;

use crate::alignment::align_points;
use crate::camera::{Pixel, PinholeIntrinsics};
use crate::geometry::{skew, Ray, SE3Pose, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("degenerate input configuration")]
    Degenerate,
    #[error("no admissible real solution")]
    NoSolution,
    #[error("numerical failure: {0}")]
    NumericalFailure(&'static str),
    #[error("insufficient parallax between the two views")]
    NoParallax,
    #[error("rays are too close to parallel for triangulation")]
    InsufficientAngle,
    #[error("triangulated point lies behind a camera")]
    CheiralityViolation,
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
}

/// A ray in the camera frame and the world point it should pass through.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayPointCorrespondence {
    pub ray: Ray,
    pub point: Vec3,
}

/// A correspondence between two images together with its normalized
/// (focal-free, undistorted) coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPair {
    pub pixel_a: Pixel,
    pub pixel_b: Pixel,
    pub norm_a: Vector2<f64>,
    pub norm_b: Vector2<f64>,
}

impl PixelPair {
    pub fn new(pixel_a: Pixel, pixel_b: Pixel, intr_a: &PinholeIntrinsics, intr_b: &PinholeIntrinsics) -> Self {
        Self {
            pixel_a,
            pixel_b,
            norm_a: intr_a.pixel_to_normalized(&pixel_a),
            norm_b: intr_b.pixel_to_normalized(&pixel_b),
        }
    }

    pub fn from_normalized(norm_a: Vector2<f64>, norm_b: Vector2<f64>) -> Self {
        Self {
            pixel_a: norm_a,
            pixel_b: norm_b,
            norm_a,
            norm_b,
        }
    }

    pub fn hom_a(&self) -> Vec3 {
        Vec3::new(self.norm_a.x, self.norm_a.y, 1.0)
    }

    pub fn hom_b(&self) -> Vec3 {
        Vec3::new(self.norm_b.x, self.norm_b.y, 1.0)
    }
}

fn check_not_collinear(points: [&Vec3; 3]) -> Result<(), SolverError> {
    let e1 = points[1] - points[0];
    let e2 = points[2] - points[0];
    let scale = e1.norm_squared().max(e2.norm_squared());
    if !(scale > 0.0) || e1.cross(&e2).norm() <= 1e-10 * scale {
        return Err(SolverError::Degenerate);
    }
    Ok(())
}

/// Residuals of the three pairwise distance constraints for depths along
/// the rays.
fn distance_residuals(corrs: &[RayPointCorrespondence; 3], depth: &[f64; 3]) -> [f64; 3] {
    let p: Vec<Vec3> = (0..3).map(|i| corrs[i].ray.at(depth[i])).collect();
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let mut out = [0.0; 3];
    for (k, &(i, j)) in pairs.iter().enumerate() {
        out[k] = (p[i] - p[j]).norm_squared() - (corrs[i].point - corrs[j].point).norm_squared();
    }
    out
}

/// Gauss-Newton refinement of the ray depths on the distance constraints.
fn polish_depths(corrs: &[RayPointCorrespondence; 3], depth: [f64; 3]) -> [f64; 3] {
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let mut x = depth;
    let mut r = distance_residuals(corrs, &x);
    let norm = |r: &[f64; 3]| r.iter().map(|v| v * v).sum::<f64>();
    for _ in 0..8 {
        let p: Vec<Vec3> = (0..3).map(|i| corrs[i].ray.at(x[i])).collect();
        let mut j = nalgebra::Matrix3::zeros();
        for (k, &(a, b)) in pairs.iter().enumerate() {
            let diff = p[a] - p[b];
            j[(k, a)] = 2.0 * diff.dot(&corrs[a].ray.direction);
            j[(k, b)] = -2.0 * diff.dot(&corrs[b].ray.direction);
        }
        let Some(inv) = j.try_inverse() else { break };
        let step = inv * Vec3::new(r[0], r[1], r[2]);
        let cand = [x[0] - step[0], x[1] - step[1], x[2] - step[2]];
        let rc = distance_residuals(corrs, &cand);
        if !(norm(&rc) < norm(&r)) {
            break;
        }
        x = cand;
        r = rc;
    }
    x
}

/// Camera-from-world pose mapping the world points onto the ray points at
/// the given depths.
fn pose_from_depths(corrs: &[RayPointCorrespondence; 3], depth: &[f64; 3]) -> Option<SE3Pose> {
    let cam: Vec<Vec3> = (0..3).map(|i| corrs[i].ray.at(depth[i])).collect();
    let world: Vec<Vec3> = corrs.iter().map(|c| c.point).collect();
    let sim = align_points(&world, &cam, false)?;
    let pose = SE3Pose::new(sim.rotation, sim.translation);
    pose.is_valid().then_some(pose)
}

/// Gauss-Newton on the perpendicular offsets of the transformed points from
/// their rays, with left-multiplicative rotation updates.
fn polish_pose(corrs: &[RayPointCorrespondence; 3], pose: SE3Pose) -> SE3Pose {
    let residuals = |p: &SE3Pose| -> Vec<Vec3> {
        corrs
            .iter()
            .map(|c| {
                let v = p.transform_point(&c.point) - c.ray.origin;
                v - c.ray.direction.into_inner() * v.dot(&c.ray.direction)
            })
            .collect()
    };
    let cost = |r: &[Vec3]| r.iter().map(|v| v.norm_squared()).sum::<f64>();
    let mut pose = pose;
    let mut r = residuals(&pose);
    let mut current = cost(&r);
    for _ in 0..5 {
        let mut jtj = nalgebra::Matrix6::<f64>::zeros();
        let mut jtr = nalgebra::Vector6::<f64>::zeros();
        for (c, ri) in corrs.iter().zip(&r) {
            let d = c.ray.direction.into_inner();
            let proj = nalgebra::Matrix3::identity() - d * d.transpose();
            let rx = pose.rotation * c.point;
            let mut j = nalgebra::Matrix3x6::<f64>::zeros();
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-proj * skew(&rx)));
            j.fixed_view_mut::<3, 3>(0, 3).copy_from(&proj);
            jtj += j.transpose() * j;
            jtr += j.transpose() * ri;
        }
        let Some(step) = jtj.try_inverse().map(|inv| -(inv * jtr)) else { break };
        let dr = nalgebra::Rotation3::new(Vec3::new(step[0], step[1], step[2])).into_inner();
        let cand = SE3Pose::new(
            dr * pose.rotation,
            pose.translation + Vec3::new(step[3], step[4], step[5]),
        );
        let rc = residuals(&cand);
        let c = cost(&rc);
        if !(c < current) {
            break;
        }
        pose = cand;
        r = rc;
        current = c;
    }
    pose
}

/// Accepts a depth triple if it satisfies the distance constraints and is in
/// front of every ray origin, and appends the resulting pose unless a
/// duplicate is already present.
fn push_candidate(corrs: &[RayPointCorrespondence; 3], depth: [f64; 3], out: &mut Vec<SE3Pose>) {
    if !depth.iter().all(|d| d.is_finite() && *d > 0.0) {
        return;
    }
    let depth = polish_depths(corrs, depth);
    if !depth.iter().all(|d| *d > 0.0) {
        return;
    }
    let scale = [(0, 1), (0, 2), (1, 2)]
        .iter()
        .map(|&(i, j)| (corrs[i].point - corrs[j].point).norm_squared())
        .fold(0.0, f64::max);
    let r = distance_residuals(corrs, &depth);
    if r.iter().any(|v| v.abs() > 1e-10 * scale) {
        return;
    }
    if let Some(pose) = pose_from_depths(corrs, &depth).map(|p| polish_pose(corrs, p)) {
        let duplicate = out.iter().any(|p| {
            (p.rotation - pose.rotation).norm() < 1e-9 && (p.translation - pose.translation).norm() < 1e-9
        });
        if !duplicate {
            out.push(pose);
        }
    }
}

/// Angular residual (radians) of a pose on a correspondence.
pub fn angular_residual(pose: &SE3Pose, corr: &RayPointCorrespondence) -> f64 {
    let v = pose.transform_point(&corr.point) - corr.ray.origin;
    let c = v.normalize().dot(&corr.ray.direction).clamp(-1.0, 1.0);
    v.normalize().cross(&corr.ray.direction).norm().atan2(c)
}
