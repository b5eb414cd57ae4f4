use nalgebra::{DMatrix, Matrix3x4};

use super::SolverError;
use crate::camera::{Pixel, VirtualCamera};
use crate::geometry::{SE3Pose, Vec3};

/// One observation of a point: the virtual camera of the observed pixel,
/// the world-to-camera pose of the real camera, and the pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulationObservation {
    pub virtual_camera: VirtualCamera,
    pub pose: SE3Pose,
    pub pixel: Pixel,
}

impl TriangulationObservation {
    /// `[R | t - c_v]`: maps world points into the virtual camera frame.
    fn projection(&self) -> Matrix3x4<f64> {
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.pose.rotation);
        p.set_column(3, &(self.pose.translation - self.virtual_camera.center));
        p
    }

    /// Unit viewing direction in world coordinates.
    pub fn world_direction(&self) -> Vec3 {
        let n = self.virtual_camera.normalize(&self.pixel);
        (self.pose.rotation.transpose() * Vec3::new(n.x, n.y, 1.0)).normalize()
    }

    /// Depth of a world point in the virtual camera.
    pub fn depth(&self, x: &Vec3) -> f64 {
        self.pose.transform_point(x).z - self.virtual_camera.center.z
    }
}

/// Linear multi-view triangulation over virtual projection matrices.
pub fn triangulate_dlt(obs: &[TriangulationObservation], min_angle: f64) -> Result<Vec3, SolverError> {
    if obs.len() < 2 {
        return Err(SolverError::InvalidInput("at least two observations required"));
    }
    let dirs: Vec<Vec3> = obs.iter().map(|o| o.world_direction()).collect();
    let mut max_angle: f64 = 0.0;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            max_angle = max_angle.max(dirs[i].cross(&dirs[j]).norm().atan2(dirs[i].dot(&dirs[j])));
        }
    }
    if max_angle < min_angle {
        return Err(SolverError::InsufficientAngle);
    }
    let mut a = DMatrix::zeros(2 * obs.len(), 4);
    for (k, o) in obs.iter().enumerate() {
        let p = o.projection();
        let n = o.virtual_camera.normalize(&o.pixel);
        let r0 = p.row(2) * n.x - p.row(0);
        let r1 = p.row(2) * n.y - p.row(1);
        let (s0, s1) = (r0.norm(), r1.norm());
        a.row_mut(2 * k).copy_from(&(r0 / s0.max(f64::MIN_POSITIVE)));
        a.row_mut(2 * k + 1).copy_from(&(r1 / s1.max(f64::MIN_POSITIVE)));
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(SolverError::NumericalFailure("SVD failed"))?;
    let smallest = (0..svd.singular_values.len())
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .unwrap();
    // With two observations the thin SVD has four rows; more rows keep four too.
    let h = v_t.row(smallest);
    if h[3].abs() < f64::MIN_POSITIVE {
        return Err(SolverError::NumericalFailure("point at infinity"));
    }
    let x = Vec3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    if !x.iter().all(|v| v.is_finite()) {
        return Err(SolverError::NumericalFailure("non-finite point"));
    }
    if obs.iter().any(|o| o.depth(&x) <= 0.0) {
        return Err(SolverError::CheiralityViolation);
    }
    Ok(x)
}
