use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CameraError, Pixel, PinholeIntrinsics, RefractiveCameraModel};
use crate::geometry::Vec3;
use crate::optim::{FnCost, LMOptions, Manifold, Problem, RobustLoss};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxFitOptions {
    pub samples: usize,
    /// Distance along each water ray, from its origin on the outer interface.
    pub depth: f64,
    pub seed: u64,
    pub fit_distortion: bool,
}

impl Default for ApproxFitOptions {
    fn default() -> Self {
        Self {
            samples: 1000,
            depth: 5.0,
            seed: 0,
            fit_distortion: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxPinholeFit {
    pub intrinsics: PinholeIntrinsics,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Root-mean-square reprojection residual of the fitted camera, in pixels.
    pub rms_px: f64,
}

/// Fits a central pinhole (optionally with k1, k2) that best reproduces the
/// refractive projection of points placed `depth` meters along the water
/// rays of uniformly drawn pixels.
pub fn fit_best_approx_pinhole(
    model: &RefractiveCameraModel,
    options: &ApproxFitOptions,
) -> Result<ApproxPinholeFit, CameraError> {
    let ApproxFitOptions { samples, depth, seed, fit_distortion } = *options;
    if samples < 20 {
        return Err(CameraError::InvalidParameter("need at least 20 fitting samples".into()));
    }
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(CameraError::InvalidParameter("fitting depth must be positive".into()));
    }
    let k = model.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<(Pixel, Vec3)> = Vec::with_capacity(samples);
    let mut attempts = 0;
    while data.len() < samples && attempts < samples * 10 {
        attempts += 1;
        let p = Pixel::new(rng.random_range(0.0..k.width as f64), rng.random_range(0.0..k.height as f64));
        if let Ok(ray) = model.back_project(&p) {
            data.push((p, ray.at(depth)));
        }
    }
    if data.len() < 4 {
        return Err(CameraError::OptimizationFailed("too few back-projectable pixels".into()));
    }

    let mut problem = Problem::new();
    let block = problem.add_block(vec![k.fx, k.fy, k.cx, k.cy, k.k1, k.k2], Manifold::Euclidean);
    if !fit_distortion {
        problem.set_constant_indices(block, vec![4, 5]);
    }
    for (pixel, point) in &data {
        let (pixel, point) = (*pixel, *point);
        problem.add_residual(
            Box::new(FnCost::new(2, move |params: &[&[f64]]| {
                let v = params[0];
                let cam = PinholeIntrinsics { fx: v[0], fy: v[1], cx: v[2], cy: v[3], k1: v[4], k2: v[5], ..k };
                let r = cam.project(&point)? - pixel;
                Some(DVector::from_row_slice(&[r.x, r.y]))
            })),
            RobustLoss::Trivial,
            vec![block],
        );
    }
    let report = problem
        .solve(&LMOptions::default())
        .map_err(|e| CameraError::OptimizationFailed(e.to_string()))?;
    if !report.final_cost.is_finite() || report.final_cost > report.initial_cost {
        return Err(CameraError::OptimizationFailed("cost did not decrease".into()));
    }
    let v = problem.block(block);
    let intrinsics = PinholeIntrinsics { fx: v[0], fy: v[1], cx: v[2], cy: v[3], k1: v[4], k2: v[5], ..k };
    intrinsics
        .validate()
        .map_err(|e| CameraError::OptimizationFailed(e.to_string()))?;
    Ok(ApproxPinholeFit {
        intrinsics,
        initial_cost: report.initial_cost,
        final_cost: report.final_cost,
        rms_px: (2.0 * report.final_cost / data.len() as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{DomePortParams, FlatPortParams, Port};

    fn intrinsics() -> PinholeIntrinsics {
        PinholeIntrinsics::from_horizontal_fov(73.0, 1920, 1280).unwrap()
    }

    #[test]
    fn centered_dome_fit_is_the_real_camera() {
        let port = Port::Dome(DomePortParams::new(Vec3::zeros(), 0.05, 0.007).unwrap());
        let m = RefractiveCameraModel::new(intrinsics(), port).unwrap();
        let fit = fit_best_approx_pinhole(&m, &ApproxFitOptions { samples: 300, ..Default::default() }).unwrap();
        assert!(fit.rms_px < 1e-6);
        assert!((fit.intrinsics.fx - m.intrinsics.fx).abs() < 1e-6);
    }

    #[test]
    fn pinhole_fit_is_identity() {
        let m = RefractiveCameraModel::pinhole(intrinsics());
        let fit = fit_best_approx_pinhole(&m, &ApproxFitOptions { samples: 100, ..Default::default() }).unwrap();
        assert!(fit.final_cost < 1e-20);
        assert_eq!(fit.intrinsics, m.intrinsics);
    }

    #[test]
    fn too_few_samples_rejected() {
        let m = RefractiveCameraModel::pinhole(intrinsics());
        let opts = ApproxFitOptions { samples: 5, ..Default::default() };
        assert!(fit_best_approx_pinhole(&m, &opts).is_err());
    }

    #[test]
    fn flat_port_fit_magnifies() {
        let port = Port::Flat(FlatPortParams::new(Vec3::z(), 0.01, 0.01).unwrap());
        let m = RefractiveCameraModel::new(intrinsics(), port).unwrap();
        let opts = ApproxFitOptions { samples: 500, seed: 3, ..Default::default() };
        let fit = fit_best_approx_pinhole(&m, &opts).unwrap();
        assert!(fit.final_cost <= fit.initial_cost);
        // Water narrows the field of view, so the effective focal grows.
        assert!(fit.intrinsics.fx > 1.2 * m.intrinsics.fx);
        let frozen = fit_best_approx_pinhole(&m, &ApproxFitOptions { fit_distortion: false, ..opts }).unwrap();
        assert_eq!(frozen.intrinsics.k1, 0.0);
        assert!(frozen.rms_px > fit.rms_px && fit.rms_px > 0.0);
    }
}
