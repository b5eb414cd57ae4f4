//! Relative pose refinement on the virtual epipolar constraint.

use nalgebra::DVector;

use super::manifold::{mat3_from_slice, mat3_to_vec};
use super::{FnCost, LMOptions, Manifold, OptimError, Problem, RobustLoss, SolveReport};
use crate::camera::{Pixel, RefractiveCameraModel, VirtualCamera};
use crate::estimation::virtual_essential;
use crate::geometry::{closest_point_on_line_to_line, Ray, SE3Pose, Vec3};
use crate::solvers::sampson_distance;

pub fn pose_to_block(pose: &SE3Pose) -> Vec<f64> {
    let mut v = mat3_to_vec(&pose.rotation);
    v.extend(pose.translation.iter());
    v
}

pub fn pose_from_block(values: &[f64]) -> SE3Pose {
    SE3Pose::new(mat3_from_slice(&values[..9]), Vec3::new(values[9], values[10], values[11]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpipolarResidual {
    /// `x_b^T E x_a` in virtual normalized coordinates.
    Algebraic,
    /// The algebraic residual divided by its first-order gradient norm.
    Sampson,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeRefineOptions {
    pub residual: EpipolarResidual,
    /// Optimize the translation length. When false the translation moves on
    /// the sphere of its initial length.
    pub free_scale: bool,
    /// Report the optimized translation as is instead of normalizing it.
    pub keep_scale: bool,
    pub lm: LMOptions,
}

impl Default for RelativeRefineOptions {
    fn default() -> Self {
        Self {
            residual: EpipolarResidual::Sampson,
            free_scale: true,
            keep_scale: false,
            lm: LMOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeRefinement {
    pub pose: SE3Pose,
    pub report: SolveReport,
}

fn epipolar_residual(kind: EpipolarResidual, va: &VirtualCamera, vb: &VirtualCamera, pose: &SE3Pose, a: &Pixel, b: &Pixel) -> f64 {
    let e = virtual_essential(va, vb, pose);
    let xa = va.normalize(a);
    let xb = vb.normalize(b);
    match kind {
        EpipolarResidual::Algebraic => Vec3::new(xb.x, xb.y, 1.0).dot(&(e * Vec3::new(xa.x, xa.y, 1.0))),
        EpipolarResidual::Sampson => sampson_distance(&e, &xa, &xb),
    }
}

/// True when most virtual ray pairs meet in front of both cameras.
fn in_front(rays: &[(Ray, Ray)], pose: &SE3Pose) -> bool {
    let inv = pose.inverse();
    let positive = rays
        .iter()
        .filter(|(ra, rb)| {
            let rb_a = Ray::new(inv.transform_point(&rb.origin), inv.rotate(&rb.direction));
            match closest_point_on_line_to_line(ra, &rb_a) {
                Ok((pa, pb, _)) => {
                    ra.direction.dot(&(pa - ra.origin)) > 0.0 && rb_a.direction.dot(&(pb - rb_a.origin)) > 0.0
                }
                Err(_) => false,
            }
        })
        .count();
    2 * positive > rays.len()
}

/// Minimizes the summed squared virtual epipolar residual over the full
/// 6-DoF relative pose `X_b = R X_a + t` (plain least squares).
pub fn refine_relative_pose_virtual_epipolar(
    model_a: &RefractiveCameraModel,
    model_b: &RefractiveCameraModel,
    pairs: &[(Pixel, Pixel)],
    initial: &SE3Pose,
    options: &RelativeRefineOptions,
) -> Result<RelativeRefinement, OptimError> {
    let data: Vec<(VirtualCamera, VirtualCamera, Pixel, Pixel)> = pairs
        .iter()
        .filter_map(|(a, b)| Some((model_a.virtual_camera(a).ok()?, model_b.virtual_camera(b).ok()?, *a, *b)))
        .collect();
    if data.len() < 5 {
        return Err(OptimError::InvalidProblem(format!(
            "need at least 5 pairs with virtual cameras, got {}",
            data.len()
        )));
    }
    let checks: Vec<(Ray, Ray)> = data
        .iter()
        .map(|(va, vb, a, b)| {
            let xa = va.normalize(a);
            let xb = vb.normalize(b);
            (
                Ray::new(va.center, Vec3::new(xa.x, xa.y, 1.0)),
                Ray::new(vb.center, Vec3::new(xb.x, xb.y, 1.0)),
            )
        })
        .collect();
    let kind = options.residual;
    let scale = if options.free_scale { 1.0 } else { initial.translation.norm() };
    if !(scale > 0.0) {
        return Err(OptimError::InvalidProblem("initial translation is zero".into()));
    }
    let translation_manifold = if options.free_scale { Manifold::Euclidean } else { Manifold::UnitSphere };
    let to_pose = move |r: &[f64], t: &[f64]| SE3Pose::new(mat3_from_slice(r), Vec3::new(t[0], t[1], t[2]) * scale);
    let mut problem = Problem::new();
    let rot = problem.add_block(mat3_to_vec(&initial.rotation), Manifold::Rotation);
    let tb = problem.add_block((initial.translation / scale).iter().copied().collect(), translation_manifold);
    problem.add_residual(
        Box::new(FnCost::new(data.len(), move |p: &[&[f64]]| {
            let pose = to_pose(p[0], p[1]);
            let r: Vec<f64> = data
                .iter()
                .map(|(va, vb, a, b)| epipolar_residual(kind, va, vb, &pose, a, b))
                .collect();
            Some(DVector::from_vec(r))
        })),
        RobustLoss::Trivial,
        vec![rot, tb],
    );
    let mut report = problem.solve(&options.lm)?;
    let mut pose = to_pose(problem.block(rot), problem.block(tb));
    if !in_front(&checks, &pose) {
        let flipped: Vec<f64> = problem.block(tb).iter().map(|v| -v).collect();
        problem.set_block_values(tb, flipped);
        let second = problem.solve(&options.lm)?;
        let candidate = to_pose(problem.block(rot), problem.block(tb));
        if second.final_cost <= report.initial_cost && in_front(&checks, &candidate) {
            report = SolveReport {
                initial_cost: report.initial_cost,
                iterations: report.iterations + second.iterations,
                accepted_steps: report.accepted_steps + second.accepted_steps,
                ..second
            };
            pose = candidate;
        } else {
            report.final_cost = report.initial_cost;
            pose = *initial;
        }
    }
    if !options.keep_scale {
        let n = pose.translation.norm();
        if n > 0.0 {
            pose.translation /= n;
        }
    }
    Ok(RelativeRefinement { pose, report })
}
