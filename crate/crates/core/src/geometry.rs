//! Elementary 3D primitives: rigid transforms, rays, planes, spheres,
//! ray/surface intersection and Snell refraction.

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::numerics;

pub type Vec3 = Vector3<f64>;
pub type UnitVec3 = Unit<Vector3<f64>>;
pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("total internal reflection")]
    TotalInternalReflection,
    #[error("ray does not intersect the surface")]
    NoIntersection,
    #[error("lines are parallel")]
    ParallelLines,
    #[error("invalid geometry: {0}")]
    Invalid(&'static str),
}

/// Rigid transform `b_T_a`: maps a point expressed in frame `a` into frame `b`
/// as `R * x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for SE3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl SE3Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Pose from an axis-angle vector (radians) and a translation.
    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        Self {
            rotation: Rotation3::new(axis_angle).into_inner(),
            translation,
        }
    }

    /// Pose from a camera center `c` expressed in the source frame:
    /// `t = -R c`.
    pub fn from_rotation_and_center(rotation: Mat3, center: Vec3) -> Self {
        Self {
            rotation,
            translation: -rotation * center,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self * other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> SE3Pose {
        let rt = self.rotation.transpose();
        SE3Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Origin of the target frame expressed in the source frame; the camera
    /// center in world coordinates for a world-to-camera pose.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation: q.to_rotation_matrix().into_inner(),
            translation,
        }
    }

    /// Geodesic angle (radians) between the rotations of two poses.
    pub fn rotation_angle_to(&self, other: &SE3Pose) -> f64 {
        rotation_angle(&(self.rotation * other.rotation.transpose()))
    }

    pub fn is_valid(&self) -> bool {
        is_rotation(&self.rotation, numerics::ROTATION_TOL)
            && self.translation.iter().all(|v| v.is_finite())
    }
}

/// Rotation angle (radians) of a rotation matrix, robust near 0 and pi.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let skew = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = 0.5 * skew.norm();
    sin.atan2(cos)
}

pub fn is_rotation(r: &Mat3, tol: f64) -> bool {
    (r * r.transpose() - Mat3::identity()).amax() < tol && (r.determinant() - 1.0).abs() < tol
}

/// Projects an arbitrary 3x3 matrix onto SO(3).
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: UnitVec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: Unit::new_normalize(direction),
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction.into_inner() * t
    }
}

/// Plane `{p : normal . p = offset}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: UnitVec3,
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: UnitVec3, offset: f64) -> Self {
        Self { normal, offset }
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Vec3, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0) {
            return Err(GeometryError::Invalid("sphere radius must be positive"));
        }
        Ok(Self { center, radius })
    }

    /// Outward unit normal at a surface point.
    pub fn normal_at(&self, p: &Vec3) -> UnitVec3 {
        Unit::new_normalize(p - self.center)
    }
}

/// Refracts `incident` through a surface with unit `normal` and index ratio
/// `ratio = n1 / n2`.
///
/// With `c = n . v` the result is `r v - (r c - sqrt(1 - r^2 (1 - c^2))) n`.
/// The normal is expected to point towards the transmitted side; a normal
/// facing the incident side is flipped so the refracted ray always continues
/// across the surface.
pub fn snell_refract(
    incident: &UnitVec3,
    normal: &UnitVec3,
    ratio: f64,
) -> Result<UnitVec3, GeometryError> {
    let v = incident.into_inner();
    let mut n = normal.into_inner();
    let mut c = n.dot(&v);
    if c < 0.0 {
        n = -n;
        c = -c;
    }
    let k = 1.0 - ratio * ratio * (1.0 - c * c);
    if k < 0.0 {
        return Err(GeometryError::TotalInternalReflection);
    }
    let refracted = ratio * v - (ratio * c - k.sqrt()) * n;
    Ok(Unit::new_normalize(refracted))
}

pub fn intersect_ray_plane(ray: &Ray, plane: &Plane) -> Result<Vec3, GeometryError> {
    let denom = plane.normal.dot(&ray.direction);
    if denom.abs() < numerics::PARALLEL_RAY_PLANE {
        return Err(GeometryError::NoIntersection);
    }
    let t = (plane.offset - plane.normal.dot(&ray.origin)) / denom;
    if t <= 0.0 {
        return Err(GeometryError::NoIntersection);
    }
    Ok(ray.at(t))
}

pub fn intersect_ray_sphere(ray: &Ray, sphere: &Sphere) -> Result<Vec3, GeometryError> {
    let d = ray.direction.into_inner();
    let oc = ray.origin - sphere.center;
    let b = oc.dot(&d);
    let c = oc.norm_squared() - sphere.radius * sphere.radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return Err(GeometryError::NoIntersection);
    }
    let sq = disc.sqrt();
    // Stable pair of roots of t^2 + 2 b t + c = 0.
    let q = if b > 0.0 { -b - sq } else { -b + sq };
    let (t0, t1) = if q == 0.0 {
        (0.0, 0.0)
    } else {
        let a = q;
        let other = c / q;
        if a < other { (a, other) } else { (other, a) }
    };
    let t = if t0 > 0.0 {
        t0
    } else if t1 > 0.0 {
        t1
    } else {
        return Err(GeometryError::NoIntersection);
    };
    Ok(ray.at(t))
}

/// Closest points between two unbounded lines `a` and `b`.
///
/// Returns `(point on a, point on b, distance)`.
pub fn closest_point_on_line_to_line(a: &Ray, b: &Ray) -> Result<(Vec3, Vec3, f64), GeometryError> {
    let da = a.direction.into_inner();
    let db = b.direction.into_inner();
    let cross = da.cross(&db);
    let cross_sq = cross.norm_squared();
    if cross_sq.sqrt() < numerics::PARALLEL_LINES {
        return Err(GeometryError::ParallelLines);
    }
    let w = b.origin - a.origin;
    let ta = w.cross(&db).dot(&cross) / cross_sq;
    let tb = w.cross(&da).dot(&cross) / cross_sq;
    let pa = a.at(ta);
    let pb = b.at(tb);
    Ok((pa, pb, (pa - pb).norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit(x: f64, y: f64, z: f64) -> UnitVec3 {
        Unit::new_normalize(Vec3::new(x, y, z))
    }

    #[test]
    fn normal_incidence_is_unchanged() {
        let n = unit(0.0, 0.0, 1.0);
        for r in [0.5, 1.0 / 1.334, 1.52, 2.0] {
            let out = snell_refract(&n, &n, r).unwrap();
            assert_relative_eq!(out.into_inner(), n.into_inner(), epsilon = 1e-15);
        }
    }

    #[test]
    fn identical_media_is_unchanged() {
        let v = unit(0.3, -0.2, 0.9);
        let n = unit(0.1, 0.05, 1.0);
        let out = snell_refract(&v, &n, 1.0).unwrap();
        assert_relative_eq!(out.into_inner(), v.into_inner(), epsilon = 1e-15);
    }

    #[test]
    fn refraction_angle_matches_scalar_snell() {
        let theta = 45f64.to_radians();
        let v = unit(theta.sin(), 0.0, theta.cos());
        let n = unit(0.0, 0.0, 1.0);
        let ratio = 1.0 / 1.334;
        let out = snell_refract(&v, &n, ratio).unwrap();
        let expected = (theta.sin() * ratio).asin();
        let got = out.x.atan2(out.z);
        assert_relative_eq!(got, expected, epsilon = 1e-14);
        // about 32.0 degrees
        assert!((got.to_degrees() - 32.0).abs() < 0.05);
    }

    #[test]
    fn total_internal_reflection_detected() {
        let theta = 60f64.to_radians();
        let v = unit(theta.sin(), 0.0, theta.cos());
        let n = unit(0.0, 0.0, 1.0);
        assert_eq!(
            snell_refract(&v, &n, 1.5),
            Err(GeometryError::TotalInternalReflection)
        );
    }

    #[test]
    fn plane_intersection_cases() {
        let ray = Ray::new(Vec3::zeros(), Vec3::z());
        let plane = Plane::new(unit(0.0, 0.0, 1.0), 0.25);
        assert_relative_eq!(intersect_ray_plane(&ray, &plane).unwrap(), Vec3::new(0.0, 0.0, 0.25));

        let parallel = Ray::new(Vec3::zeros(), Vec3::x());
        assert_eq!(intersect_ray_plane(&parallel, &plane), Err(GeometryError::NoIntersection));

        let behind = Ray::new(Vec3::zeros(), -Vec3::z());
        assert_eq!(intersect_ray_plane(&behind, &plane), Err(GeometryError::NoIntersection));
    }

    #[test]
    fn sphere_intersection_cases() {
        let sphere = Sphere::new(Vec3::new(0.1, -0.2, 0.3), 0.7).unwrap();
        for d in [Vec3::x(), Vec3::new(1.0, 2.0, -3.0), -Vec3::z()] {
            let ray = Ray::new(sphere.center, d);
            let p = intersect_ray_sphere(&ray, &sphere).unwrap();
            assert_relative_eq!((p - sphere.center).norm(), 0.7, epsilon = 1e-14);
        }

        let away = Ray::new(Vec3::new(0.0, 0.0, 5.0), Vec3::z());
        let unit_sphere = Sphere::new(Vec3::zeros(), 1.0).unwrap();
        assert_eq!(intersect_ray_sphere(&away, &unit_sphere), Err(GeometryError::NoIntersection));

        // Origin offset inside a 5 cm sphere: t solves t^2 + 2 b t + c = 0 with
        // b = -0.003, c = 0.003^2 - 0.05^2, so t = 0.003 + 0.05 and p_z = 0.05.
        let dome = Sphere::new(Vec3::new(0.0, 0.0, 0.003), 0.05).unwrap();
        let ray = Ray::new(Vec3::zeros(), Vec3::z());
        let p = intersect_ray_sphere(&ray, &dome).unwrap();
        assert_relative_eq!(p.z, 0.053, epsilon = 1e-15);
        assert!(((p - dome.center).norm() - 0.05).abs() < 1e-12);

        assert!(Sphere::new(Vec3::zeros(), 0.0).is_err());
    }

    #[test]
    fn line_line_cases() {
        let a = Ray::new(Vec3::new(-1.0, 0.0, 0.0), Vec3::x());
        let b = Ray::new(Vec3::new(0.0, 2.0, 0.0), Vec3::y());
        let (pa, pb, d) = closest_point_on_line_to_line(&a, &b).unwrap();
        assert!(pa.norm() < 1e-15 && pb.norm() < 1e-15 && d < 1e-15);

        let c = Ray::new(Vec3::new(0.0, 1.0, 0.0), Vec3::x());
        assert_eq!(closest_point_on_line_to_line(&a, &c), Err(GeometryError::ParallelLines));

        // Skew lines: x-axis and the line {(s, 1, 2) + u(0,1,1)}; closest pair
        // solved by hand from the perpendicularity conditions.
        let e = Ray::new(Vec3::new(3.0, 1.0, 2.0), Vec3::new(0.0, 1.0, 1.0));
        let (pa, pb, d) = closest_point_on_line_to_line(&a, &e).unwrap();
        // Points: (3,0,0) on a, (3, -0.5, 0.5) on e; distance sqrt(0.5).
        assert_relative_eq!(pa, Vec3::new(3.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(pb, Vec3::new(3.0, -0.5, 0.5), epsilon = 1e-12);
        assert_relative_eq!(d, 0.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn random_plane_hits_satisfy_equation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let n = unit(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0));
            let plane = Plane::new(n, rng.random_range(0.1..2.0));
            let dir = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 1.0);
            let ray = Ray::new(Vec3::zeros(), dir);
            if let Ok(p) = intersect_ray_plane(&ray, &plane) {
                assert!(plane.signed_distance(&p).abs() < 1e-12);
            }
        }
    }

    fn arb_unit() -> impl Strategy<Value = UnitVec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-zero", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| unit(x, y, z))
    }

    fn arb_pose() -> impl Strategy<Value = SE3Pose> {
        (
            (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64),
            (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64),
        )
            .prop_map(|((a, b, c), (x, y, z))| SE3Pose::from_axis_angle(Vec3::new(a, b, c), Vec3::new(x, y, z)))
    }

    proptest! {
        #[test]
        fn refraction_is_reversible(v in arb_unit(), n in arb_unit(), ratio in 0.5..2.0f64) {
            if let Ok(out) = snell_refract(&v, &n, ratio) {
                let back = snell_refract(&out, &Unit::new_unchecked(-n.into_inner()), 1.0 / ratio).unwrap();
                prop_assert!((back.into_inner() - v.into_inner()).amax() < 1e-10);
            }
        }

        #[test]
        fn refraction_stays_in_plane_of_incidence(v in arb_unit(), n in arb_unit(), ratio in 0.5..2.0f64) {
            if let Ok(out) = snell_refract(&v, &n, ratio) {
                let triple = v.cross(&n).dot(&out);
                prop_assert!(triple.abs() < 1e-12);
                prop_assert!((out.norm() - 1.0).abs() < 1e-12);
                // n1 sin(theta1) = n2 sin(theta2), with n2 = 1 and n1 = ratio.
                let s1 = v.cross(&n).norm();
                let s2 = out.cross(&n).norm();
                prop_assert!((ratio * s1 - s2).abs() < 1e-12);
            }
        }

        #[test]
        fn se3_group_laws(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let lhs = a.compose(&b).compose(&c);
            let rhs = a.compose(&b.compose(&c));
            prop_assert!((lhs.rotation - rhs.rotation).amax() < 1e-10);
            prop_assert!((lhs.translation - rhs.translation).amax() < 1e-10);
            let id = a.compose(&a.inverse());
            prop_assert!((id.rotation - Mat3::identity()).amax() < 1e-10);
            prop_assert!(id.translation.amax() < 1e-10);
            prop_assert!(a.is_valid());
        }
    }
}
