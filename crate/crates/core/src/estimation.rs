//! Robust absolute and relative pose estimation for refractive cameras.

use thiserror::Error;

use crate::camera::{
    fit_best_approx_pinhole, ApproxFitOptions, CameraError, PinholeIntrinsics, Pixel, Port, RefractiveCameraModel,
    VirtualCamera,
};
use crate::geometry::{skew, Mat3, Ray, SE3Pose, Vec3};
use crate::ransac::{ransac, Estimator, RansacError, RansacOptions, RansacReport};
use crate::solvers::{
    decompose_essential, sampson_distance, solve_five_point, solve_gp3p, solve_p3p, EssentialMatrix, PixelPair,
    RayPointCorrespondence, SolverError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error(transparent)]
    Ransac(#[from] RansacError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// A 2D observation paired with its known world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPointCorrespondence {
    pub pixel: Pixel,
    pub point: Vec3,
}

struct GeneralizedAbsolutePose {
    cams: Vec<Option<VirtualCamera>>,
    corrs: Vec<PixelPointCorrespondence>,
}

impl Estimator for GeneralizedAbsolutePose {
    type Model = SE3Pose;

    fn sample_size(&self) -> usize {
        3
    }

    fn num_data(&self) -> usize {
        self.corrs.len()
    }

    fn fit(&self, sample: &[usize]) -> Vec<SE3Pose> {
        let mut rays = [RayPointCorrespondence {
            ray: Ray::new(Vec3::zeros(), Vec3::z()),
            point: Vec3::zeros(),
        }; 3];
        for (slot, &i) in rays.iter_mut().zip(sample) {
            let Some(vc) = self.cams[i] else {
                return Vec::new();
            };
            let n = vc.normalize(&self.corrs[i].pixel);
            *slot = RayPointCorrespondence {
                ray: Ray::new(vc.center, Vec3::new(n.x, n.y, 1.0)),
                point: self.corrs[i].point,
            };
        }
        solve_gp3p(&rays).unwrap_or_default()
    }

    fn residual(&self, pose: &SE3Pose, i: usize) -> f64 {
        let Some(vc) = self.cams[i] else {
            return f64::INFINITY;
        };
        match vc.project(&pose.transform_point(&self.corrs[i].point)) {
            Some(p) => (p - self.corrs[i].pixel).norm(),
            None => f64::INFINITY,
        }
    }
}

/// Camera-from-world pose of a refractive camera from 2D-3D matches, treating
/// the per-pixel virtual cameras as a generalized camera. The RANSAC
/// threshold is a virtual reprojection error in pixels.
pub fn estimate_absolute_pose_refractive(
    model: &RefractiveCameraModel,
    corrs: &[PixelPointCorrespondence],
    options: &RansacOptions,
) -> Result<RansacReport<SE3Pose>, EstimationError> {
    let est = GeneralizedAbsolutePose {
        cams: corrs.iter().map(|c| model.virtual_camera(&c.pixel).ok()).collect(),
        corrs: corrs.to_vec(),
    };
    Ok(ransac(&est, options)?)
}

struct CentralAbsolutePose {
    intrinsics: PinholeIntrinsics,
    corrs: Vec<PixelPointCorrespondence>,
}

impl Estimator for CentralAbsolutePose {
    type Model = SE3Pose;

    fn sample_size(&self) -> usize {
        3
    }

    fn num_data(&self) -> usize {
        self.corrs.len()
    }

    fn fit(&self, sample: &[usize]) -> Vec<SE3Pose> {
        let mk = |i: usize| {
            let n = self.intrinsics.pixel_to_normalized(&self.corrs[i].pixel);
            RayPointCorrespondence {
                ray: Ray::new(Vec3::zeros(), Vec3::new(n.x, n.y, 1.0)),
                point: self.corrs[i].point,
            }
        };
        solve_p3p(&[mk(sample[0]), mk(sample[1]), mk(sample[2])]).unwrap_or_default()
    }

    fn residual(&self, pose: &SE3Pose, i: usize) -> f64 {
        match self.intrinsics.project(&pose.transform_point(&self.corrs[i].point)) {
            Some(p) => (p - self.corrs[i].pixel).norm(),
            None => f64::INFINITY,
        }
    }
}

/// Pinhole P3P-in-RANSAC baseline.
pub fn estimate_absolute_pose_central(
    intrinsics: &PinholeIntrinsics,
    corrs: &[PixelPointCorrespondence],
    options: &RansacOptions,
) -> Result<RansacReport<SE3Pose>, EstimationError> {
    let est = CentralAbsolutePose {
        intrinsics: *intrinsics,
        corrs: corrs.to_vec(),
    };
    Ok(ransac(&est, options)?)
}

struct FivePoint<'a> {
    pairs: &'a [PixelPair],
}

impl Estimator for FivePoint<'_> {
    type Model = EssentialMatrix;

    fn sample_size(&self) -> usize {
        5
    }

    fn num_data(&self) -> usize {
        self.pairs.len()
    }

    fn fit(&self, sample: &[usize]) -> Vec<EssentialMatrix> {
        let s: Vec<PixelPair> = sample.iter().map(|&i| self.pairs[i]).collect();
        solve_five_point(&s).unwrap_or_default()
    }

    fn residual(&self, e: &EssentialMatrix, i: usize) -> f64 {
        let p = &self.pairs[i];
        sampson_distance(e.matrix(), &p.norm_a, &p.norm_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePoseOptions {
    /// Threshold is a Sampson distance in normalized image units.
    pub ransac: RansacOptions,
    /// Threshold on the virtual Sampson residual used for re-scoring.
    pub virtual_threshold: f64,
}

impl Default for RelativePoseOptions {
    fn default() -> Self {
        Self {
            ransac: RansacOptions {
                threshold: 1e-3,
                ..RansacOptions::default()
            },
            virtual_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativePoseEstimate {
    /// Pose of view b relative to view a, `X_b = R X_a + t`, with `|t| = 1`.
    pub pose: SE3Pose,
    pub ransac: RansacReport<EssentialMatrix>,
    /// Inliers under the virtual Sampson residual; equals the RANSAC mask
    /// for central cameras.
    pub virtual_inlier_mask: Vec<bool>,
    pub virtual_inlier_ratio: f64,
}

impl RelativePoseEstimate {
    pub fn inlier_ratio(&self) -> f64 {
        self.ransac.inlier_ratio
    }
}

fn five_point_ransac(
    pairs: &[PixelPair],
    options: &RansacOptions,
) -> Result<(RansacReport<EssentialMatrix>, SE3Pose), EstimationError> {
    let report = ransac(&FivePoint { pairs }, options)?;
    let inliers: Vec<PixelPair> = pairs
        .iter()
        .zip(&report.inlier_mask)
        .filter(|(_, m)| **m)
        .map(|(p, _)| *p)
        .collect();
    let pose = decompose_essential(&report.model, &inliers)?;
    Ok((report, pose))
}

/// Pinhole five-point-in-RANSAC baseline.
pub fn estimate_relative_pose_central(
    intr_a: &PinholeIntrinsics,
    intr_b: &PinholeIntrinsics,
    pixels: &[(Pixel, Pixel)],
    options: &RelativePoseOptions,
) -> Result<RelativePoseEstimate, EstimationError> {
    let pairs: Vec<PixelPair> = pixels.iter().map(|(a, b)| PixelPair::new(*a, *b, intr_a, intr_b)).collect();
    let (report, pose) = five_point_ransac(&pairs, &options.ransac)?;
    Ok(RelativePoseEstimate {
        pose,
        virtual_inlier_mask: report.inlier_mask.clone(),
        virtual_inlier_ratio: report.inlier_ratio,
        ransac: report,
    })
}

/// Essential matrix between the virtual cameras `va` (in frame a) and `vb`
/// (in frame b) under the relative pose `X_b = R X_a + t`.
pub fn virtual_essential(va: &VirtualCamera, vb: &VirtualCamera, pose_ba: &SE3Pose) -> Mat3 {
    let t = pose_ba.rotation * va.center + pose_ba.translation - vb.center;
    skew(&t) * pose_ba.rotation
}

/// Sampson distance of a pixel pair under the pair's virtual cameras.
pub fn virtual_sampson_residual(
    va: &VirtualCamera,
    vb: &VirtualCamera,
    pose_ba: &SE3Pose,
    pixel_a: &Pixel,
    pixel_b: &Pixel,
) -> f64 {
    let e = virtual_essential(va, vb, pose_ba);
    sampson_distance(&e, &va.normalize(pixel_a), &vb.normalize(pixel_b))
}

/// Best-approximated pinhole of a refractive model; a plain pinhole is its
/// own approximation.
pub fn approximate_pinhole(
    model: &RefractiveCameraModel,
    fit: &ApproxFitOptions,
) -> Result<PinholeIntrinsics, CameraError> {
    match model.port {
        Port::None => Ok(model.intrinsics),
        _ => Ok(fit_best_approx_pinhole(model, fit)?.intrinsics),
    }
}

/// Relative pose estimator for a pair of refractive cameras, holding their
/// best-approximated pinhole fits.
#[derive(Debug, Clone, PartialEq)]
pub struct RefractiveRelativePose {
    pub model_a: RefractiveCameraModel,
    pub model_b: RefractiveCameraModel,
    pub prox_a: PinholeIntrinsics,
    pub prox_b: PinholeIntrinsics,
}

impl RefractiveRelativePose {
    pub fn new(
        model_a: &RefractiveCameraModel,
        model_b: &RefractiveCameraModel,
        fit: &ApproxFitOptions,
    ) -> Result<Self, CameraError> {
        let prox_a = approximate_pinhole(model_a, fit)?;
        let prox_b = if model_a == model_b {
            prox_a
        } else {
            approximate_pinhole(model_b, fit)?
        };
        Ok(Self {
            model_a: *model_a,
            model_b: *model_b,
            prox_a,
            prox_b,
        })
    }

    pub fn estimate(
        &self,
        pixels: &[(Pixel, Pixel)],
        options: &RelativePoseOptions,
    ) -> Result<RelativePoseEstimate, EstimationError> {
        let pairs: Vec<PixelPair> = pixels
            .iter()
            .map(|(a, b)| PixelPair::new(*a, *b, &self.prox_a, &self.prox_b))
            .collect();
        let (report, pose) = five_point_ransac(&pairs, &options.ransac)?;
        let virtual_inlier_mask: Vec<bool> = pixels
            .iter()
            .zip(&report.inlier_mask)
            .map(|((a, b), &inlier)| {
                inlier
                    && match (self.model_a.virtual_camera(a), self.model_b.virtual_camera(b)) {
                        (Ok(va), Ok(vb)) => virtual_sampson_residual(&va, &vb, &pose, a, b) <= options.virtual_threshold,
                        _ => false,
                    }
            })
            .collect();
        let count = virtual_inlier_mask.iter().filter(|m| **m).count();
        Ok(RelativePoseEstimate {
            pose,
            virtual_inlier_ratio: count as f64 / pixels.len() as f64,
            virtual_inlier_mask,
            ransac: report,
        })
    }
}

/// One-shot form of [`RefractiveRelativePose::estimate`].
pub fn estimate_relative_pose_refractive(
    model_a: &RefractiveCameraModel,
    model_b: &RefractiveCameraModel,
    pixels: &[(Pixel, Pixel)],
    options: &RelativePoseOptions,
    fit: &ApproxFitOptions,
) -> Result<RelativePoseEstimate, EstimationError> {
    RefractiveRelativePose::new(model_a, model_b, fit)?.estimate(pixels, options)
}


/// Virtual reprojection error (pixels) of a camera-frame point against the
/// pixel it was observed at, or `None` if the pixel has no virtual camera or
/// the point lies behind it.
pub fn virtual_reprojection_error(model: &RefractiveCameraModel, pixel: &Pixel, point_cam: &Vec3) -> Option<f64> {
    let vc = model.virtual_camera(pixel).ok()?;
    vc.project(point_cam).map(|p| (p - pixel).norm())
}
