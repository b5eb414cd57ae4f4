//! Closed-form least-squares alignment of corresponding 3D point sets.

use nalgebra::Matrix3;

use crate::geometry::{Mat3, SE3Pose, Vec3};

/// `dst ≈ scale * rotation * src + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    /// Maps a world-to-camera pose of the source frame into the target frame.
    pub fn transform_pose(&self, pose: &SE3Pose) -> SE3Pose {
        let rotation = pose.rotation * self.rotation.transpose();
        let center = self.apply(&pose.center());
        SE3Pose::from_rotation_and_center(rotation, center)
    }
}

/// Umeyama alignment. With `with_scale = false` the scale is fixed to one
/// (Kabsch). Returns `None` for fewer than three points or a degenerate
/// source configuration.
pub fn align_points(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Option<Similarity> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vec3>() / n;
    let mu_d = dst.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - mu_s, d - mu_d);
        cov += b * a.transpose();
        var_s += a.norm_squared();
    }
    cov /= n;
    var_s /= n;
    if var_s <= f64::MIN_POSITIVE {
        return None;
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut sign = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let rotation = u * sign * v_t;
    let scale = if with_scale {
        let trace: f64 = (0..3).map(|i| svd.singular_values[i] * sign[(i, i)]).sum();
        trace / var_s
    } else {
        1.0
    };
    if !(scale.is_finite() && scale > 0.0) {
        return None;
    }
    let translation = mu_d - scale * (rotation * mu_s);
    Some(Similarity {
        scale,
        rotation,
        translation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::is_rotation;

    fn cloud() -> Vec<Vec3> {
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.2, -0.3),
            Vec3::new(0.3, 2.0, 0.1),
            Vec3::new(-0.5, 0.4, 1.5),
            Vec3::new(0.7, -1.1, 0.8),
        ]
    }

    #[test]
    fn recovers_known_similarity() {
        let truth = Similarity {
            scale: 2.5,
            rotation: SE3Pose::from_axis_angle(Vec3::new(0.3, -0.2, 1.1), Vec3::zeros()).rotation,
            translation: Vec3::new(1.0, -2.0, 0.5),
        };
        let src = cloud();
        let dst: Vec<Vec3> = src.iter().map(|p| truth.apply(p)).collect();
        let est = align_points(&src, &dst, true).unwrap();
        assert!((est.scale - truth.scale).abs() < 1e-12);
        assert!((est.rotation - truth.rotation).norm() < 1e-12);
        assert!((est.translation - truth.translation).norm() < 1e-12);
        let rigid = align_points(&src, &src.iter().map(|p| truth.rotation * p).collect::<Vec<_>>(), false).unwrap();
        assert!(is_rotation(&rigid.rotation, 1e-12) && rigid.scale == 1.0);
    }

    #[test]
    fn reflection_is_not_returned() {
        let src = cloud();
        let dst: Vec<Vec3> = src.iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect();
        let est = align_points(&src, &dst, false).unwrap();
        assert!(est.rotation.determinant() > 0.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(align_points(&cloud()[..2], &cloud()[..2], true).is_none());
        let same = vec![Vec3::new(1.0, 1.0, 1.0); 4];
        assert!(align_points(&same, &same, true).is_none());
    }

    #[test]
    fn pose_transform_matches_point_transform() {
        let sim = Similarity {
            scale: 0.5,
            rotation: SE3Pose::from_axis_angle(Vec3::new(0.1, 0.5, -0.2), Vec3::zeros()).rotation,
            translation: Vec3::new(0.2, 0.0, 3.0),
        };
        let pose = SE3Pose::from_axis_angle(Vec3::new(-0.4, 0.2, 0.3), Vec3::new(1.0, 2.0, -1.0));
        let x = Vec3::new(0.4, -0.6, 2.0);
        let moved = sim.transform_pose(&pose);
        let a = pose.transform_point(&x);
        let b = moved.transform_point(&sim.apply(&x));
        assert!((b - sim.scale * a).norm() < 1e-12);
    }
}
