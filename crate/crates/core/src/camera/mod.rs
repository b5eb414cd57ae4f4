//! Flat-port and dome-port refractive camera models.
//!
//! A real pinhole camera sits behind a glass interface. Pixels are
//! back-projected by tracing the camera ray through both glass surfaces into
//! the water. Every water ray crosses the refraction axis, which lets each
//! observation be replaced by a per-pixel virtual pinhole camera with
//! identity rotation and the mean focal length of the real camera. Its
//! principal point is chosen so the observed pixel is preserved.

mod approx;

pub use approx::{fit_best_approx_pinhole, ApproxFitOptions, ApproxPinholeFit};

use nalgebra::{Unit, Vector2};
use thiserror::Error;

use crate::geometry::{
    closest_point_on_line_to_line, intersect_ray_plane, intersect_ray_sphere, snell_refract,
    GeometryError, Plane, Ray, Sphere, UnitVec3, Vec3,
};
use crate::numerics;

pub type Pixel = Vector2<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("invalid camera parameter: {0}")]
    InvalidParameter(String),
    #[error("total internal reflection while tracing the ray")]
    TotalInternalReflection,
    #[error("ray misses the port interface")]
    NoIntersection,
    #[error("camera model is central; no refraction axis")]
    CentralCamera,
    #[error("point or ray lies behind the camera")]
    BehindCamera,
    #[error("refractive forward projection did not converge")]
    Diverged,
    #[error("best-approximated pinhole fit failed: {0}")]
    OptimizationFailed(String),
}

impl From<GeometryError> for CameraError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::TotalInternalReflection => CameraError::TotalInternalReflection,
            GeometryError::NoIntersection | GeometryError::ParallelLines => CameraError::NoIntersection,
            GeometryError::Invalid(msg) => CameraError::InvalidParameter(msg.to_string()),
        }
    }
}

/// Pinhole intrinsics with optional two-term radial distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub k1: f64,
    pub k2: f64,
}

impl PinholeIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, CameraError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            k1: 0.0,
            k2: 0.0,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel camera from a horizontal field of view in degrees, with
    /// the principal point at the image center.
    pub fn from_horizontal_fov(fov_deg: f64, width: u32, height: u32) -> Result<Self, CameraError> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(CameraError::InvalidParameter(format!("field of view {fov_deg}")));
        }
        let f = 0.5 * width as f64 / (0.5 * fov_deg.to_radians()).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    pub fn with_distortion(mut self, k1: f64, k2: f64) -> Self {
        self.k1 = k1;
        self.k2 = k2;
        self
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.k1, self.k2]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(CameraError::InvalidParameter("non-finite intrinsics".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::InvalidParameter("focal lengths must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(CameraError::InvalidParameter("principal point outside the image".into()));
        }
        Ok(())
    }

    pub fn f_mean(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    pub fn has_distortion(&self) -> bool {
        self.k1 != 0.0 || self.k2 != 0.0
    }

    pub fn contains(&self, p: &Pixel) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }

    pub fn distort(&self, n: &Vector2<f64>) -> Vector2<f64> {
        let r2 = n.norm_squared();
        n * (1.0 + self.k1 * r2 + self.k2 * r2 * r2)
    }

    /// Inverts [`PinholeIntrinsics::distort`] by fixed-point iteration.
    pub fn undistort(&self, d: &Vector2<f64>) -> Vector2<f64> {
        if !self.has_distortion() {
            return *d;
        }
        let mut n = *d;
        for _ in 0..numerics::UNDISTORT_ITERS {
            let r2 = n.norm_squared();
            n = d / (1.0 + self.k1 * r2 + self.k2 * r2 * r2);
        }
        n
    }

    /// Undistorted normalized image coordinates of a pixel.
    pub fn pixel_to_normalized(&self, p: &Pixel) -> Vector2<f64> {
        let d = Vector2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy);
        self.undistort(&d)
    }

    pub fn normalized_to_pixel(&self, n: &Vector2<f64>) -> Pixel {
        let d = self.distort(n);
        Pixel::new(self.fx * d.x + self.cx, self.fy * d.y + self.cy)
    }

    /// Central projection of a point in the camera frame.
    pub fn project(&self, p: &Vec3) -> Option<Pixel> {
        if p.z <= 0.0 {
            return None;
        }
        Some(self.normalized_to_pixel(&Vector2::new(p.x / p.z, p.y / p.z)))
    }
}

/// Refraction indices of the three media.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediaIndices {
    pub air: f64,
    pub glass: f64,
    pub water: f64,
}

impl Default for MediaIndices {
    fn default() -> Self {
        Self {
            air: 1.0,
            glass: 1.52,
            water: 1.334,
        }
    }
}

impl MediaIndices {
    fn validate(&self) -> Result<(), CameraError> {
        if [self.air, self.glass, self.water].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(CameraError::InvalidParameter("refraction indices must be positive".into()))
        }
    }
}

/// Planar port: inner glass surface at `distance` along `normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatPortParams {
    pub normal: UnitVec3,
    pub distance: f64,
    pub thickness: f64,
    pub indices: MediaIndices,
}

impl FlatPortParams {
    pub fn new(normal: Vec3, distance: f64, thickness: f64) -> Result<Self, CameraError> {
        let p = Self {
            normal: Unit::new_normalize(normal),
            distance,
            thickness,
            indices: MediaIndices::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.normal.z > 0.0) {
            return Err(CameraError::InvalidParameter("flat-port normal must face the scene (n_z > 0)".into()));
        }
        if !(self.distance > 0.0 && self.distance.is_finite()) {
            return Err(CameraError::InvalidParameter("camera-to-interface distance must be positive".into()));
        }
        if !(self.thickness >= 0.0 && self.thickness.is_finite()) {
            return Err(CameraError::InvalidParameter("thickness must be non-negative".into()));
        }
        self.indices.validate()
    }
}

/// Spherical port: inner sphere of `radius` around `center` (camera frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomePortParams {
    pub center: Vec3,
    pub radius: f64,
    pub thickness: f64,
    pub indices: MediaIndices,
}

impl DomePortParams {
    pub fn new(center: Vec3, radius: f64, thickness: f64) -> Result<Self, CameraError> {
        let p = Self {
            center,
            radius,
            thickness,
            indices: MediaIndices::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.thickness >= 0.0 && self.radius > self.thickness && self.radius.is_finite()) {
            return Err(CameraError::InvalidParameter("dome needs radius > thickness >= 0".into()));
        }
        if !(self.center.norm() < self.radius) {
            return Err(CameraError::InvalidParameter("camera center must lie inside the dome".into()));
        }
        self.indices.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Port {
    None,
    Flat(FlatPortParams),
    Dome(DomePortParams),
}

impl Port {
    pub fn kind(&self) -> &'static str {
        match self {
            Port::None => "pinhole",
            Port::Flat(_) => "flat",
            Port::Dome(_) => "dome",
        }
    }

    /// Whether a camera-frame point lies beyond the outer glass surface.
    pub fn in_water(&self, point: &Vec3) -> bool {
        match self {
            Port::None => true,
            Port::Flat(f) => f.normal.dot(point) > f.distance + f.thickness,
            Port::Dome(d) => (point - d.center).norm() > d.radius + d.thickness,
        }
    }
}

/// Per-observation pinhole surrogate. Rotation is the identity; `center` is
/// expressed in the real camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualCamera {
    pub center: Vec3,
    pub focal: f64,
    pub principal_point: Pixel,
}

impl VirtualCamera {
    /// Projects a point given in the real camera frame.
    pub fn project(&self, p: &Vec3) -> Option<Pixel> {
        let q = p - self.center;
        if q.z <= 0.0 {
            return None;
        }
        Some(Pixel::new(
            self.focal * q.x / q.z + self.principal_point.x,
            self.focal * q.y / q.z + self.principal_point.y,
        ))
    }

    /// Normalized (focal-free) coordinates of a pixel in this camera.
    pub fn normalize(&self, p: &Pixel) -> Vector2<f64> {
        (p - self.principal_point) / self.focal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefractiveCameraModel {
    pub intrinsics: PinholeIntrinsics,
    pub port: Port,
}

impl RefractiveCameraModel {
    pub fn new(intrinsics: PinholeIntrinsics, port: Port) -> Result<Self, CameraError> {
        let m = Self { intrinsics, port };
        m.validate()?;
        Ok(m)
    }

    pub fn pinhole(intrinsics: PinholeIntrinsics) -> Self {
        Self {
            intrinsics,
            port: Port::None,
        }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        self.intrinsics.validate()?;
        match &self.port {
            Port::None => Ok(()),
            Port::Flat(p) => p.validate(),
            Port::Dome(p) => p.validate(),
        }
    }

    /// True when every back-projected ray passes through the camera center.
    pub fn is_central(&self) -> bool {
        match &self.port {
            Port::None => true,
            Port::Flat(_) => false,
            Port::Dome(d) => d.center.norm() < numerics::EPSILON_CENTRAL,
        }
    }

    /// Water ray of a pixel, in the real camera frame. The origin lies on the
    /// outer interface surface (the camera center for a plain pinhole).
    pub fn back_project(&self, pixel: &Pixel) -> Result<Ray, CameraError> {
        let n = self.intrinsics.pixel_to_normalized(pixel);
        let camera_ray = Ray::new(Vec3::zeros(), Vec3::new(n.x, n.y, 1.0));
        match &self.port {
            Port::None => Ok(camera_ray),
            Port::Flat(p) => trace_flat(p, &camera_ray),
            Port::Dome(p) => trace_dome(p, &camera_ray),
        }
    }

    /// Line through the camera center along which rays cross the interface
    /// perpendicularly.
    pub fn refraction_axis(&self) -> Result<Ray, CameraError> {
        match &self.port {
            Port::None => Err(CameraError::CentralCamera),
            Port::Flat(p) => Ok(Ray {
                origin: Vec3::zeros(),
                direction: p.normal,
            }),
            Port::Dome(p) => {
                let norm = p.center.norm();
                if norm < numerics::EPSILON_CENTRAL {
                    Err(CameraError::CentralCamera)
                } else {
                    Ok(Ray::new(Vec3::zeros(), p.center / norm))
                }
            }
        }
    }

    pub fn virtual_camera(&self, pixel: &Pixel) -> Result<VirtualCamera, CameraError> {
        let ray = self.back_project(pixel)?;
        self.virtual_camera_from_ray(pixel, &ray)
    }

    fn virtual_camera_from_ray(&self, pixel: &Pixel, ray: &Ray) -> Result<VirtualCamera, CameraError> {
        let focal = self.intrinsics.f_mean();
        let v = ray.direction;
        if v.z <= 0.0 {
            return Err(CameraError::BehindCamera);
        }
        let principal_point = Pixel::new(pixel.x - focal * v.x / v.z, pixel.y - focal * v.y / v.z);
        let center = match self.refraction_axis() {
            Ok(axis) => {
                if axis.direction.cross(&v).norm() < numerics::AXIAL_RAY {
                    Vec3::zeros()
                } else {
                    match closest_point_on_line_to_line(&axis, ray) {
                        Ok((on_axis, _, _)) => on_axis,
                        Err(_) => Vec3::zeros(),
                    }
                }
            }
            Err(CameraError::CentralCamera) => Vec3::zeros(),
            Err(e) => return Err(e),
        };
        Ok(VirtualCamera {
            center,
            focal,
            principal_point,
        })
    }

    /// Refractive projection of a point in the camera frame.
    ///
    /// Starts from the central projection and repeatedly re-projects the point
    /// through the virtual camera of the current pixel. Falls back to a damped
    /// iteration when the plain one oscillates.
    pub fn forward_project(&self, point: &Vec3) -> Result<Pixel, CameraError> {
        self.forward_project_with_iterations(point).map(|(p, _)| p)
    }

    /// As [`RefractiveCameraModel::forward_project`], also returning the
    /// number of fixed-point iterations used.
    pub fn forward_project_with_iterations(&self, point: &Vec3) -> Result<(Pixel, usize), CameraError> {
        let start = self.intrinsics.project(point).ok_or(CameraError::BehindCamera)?;
        if let Port::None = self.port {
            return Ok((start, 0));
        }
        let step = |x: &Pixel| -> Result<Pixel, CameraError> {
            self.virtual_camera(x)?.project(point).ok_or(CameraError::BehindCamera)
        };

        let mut x = start;
        let mut prev_move = f64::INFINITY;
        let mut growth = 0;
        let mut plain_ok = true;
        for iter in 1..=numerics::FORWARD_PROJECT_MAX_ITERS {
            let next = match step(&x) {
                Ok(p) => p,
                Err(_) => {
                    plain_ok = false;
                    break;
                }
            };
            let moved = (next - x).norm();
            if !moved.is_finite() {
                plain_ok = false;
                break;
            }
            if moved < numerics::FORWARD_PROJECT_STEP_TOL {
                return Ok((next, iter));
            }
            if moved > prev_move {
                growth += 1;
                if growth >= numerics::FORWARD_PROJECT_GROWTH_LIMIT {
                    plain_ok = false;
                    break;
                }
            } else {
                growth = 0;
            }
            prev_move = moved;
            x = next;
        }
        let _ = plain_ok;

        // Damped fixed-point iteration with step halving.
        let mut x = start;
        let mut alpha = 1.0;
        let mut residual = match step(&x) {
            Ok(p) => p - x,
            Err(e) => return Err(e),
        };
        for iter in 1..=numerics::FORWARD_PROJECT_MAX_ITERS {
            if residual.norm() < numerics::FORWARD_PROJECT_STEP_TOL {
                return Ok((x + residual, numerics::FORWARD_PROJECT_MAX_ITERS + iter));
            }
            let mut accepted = false;
            while alpha > 1e-6 {
                let candidate = x + residual * alpha;
                if let Ok(p) = step(&candidate) {
                    let r = p - candidate;
                    if r.norm() < residual.norm() {
                        x = candidate;
                        residual = r;
                        accepted = true;
                        alpha = (alpha * 2.0).min(1.0);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Err(CameraError::Diverged)
    }
}

fn trace_flat(p: &FlatPortParams, camera_ray: &Ray) -> Result<Ray, CameraError> {
    let inner = Plane::new(p.normal, p.distance);
    let hit_inner = intersect_ray_plane(camera_ray, &inner)?;
    let in_glass = snell_refract(&camera_ray.direction, &p.normal, p.indices.air / p.indices.glass)?;
    let hit_outer = if p.thickness > 0.0 {
        let outer = Plane::new(p.normal, p.distance + p.thickness);
        intersect_ray_plane(&Ray { origin: hit_inner, direction: in_glass }, &outer)?
    } else {
        hit_inner
    };
    let in_water = snell_refract(&in_glass, &p.normal, p.indices.glass / p.indices.water)?;
    Ok(Ray {
        origin: hit_outer,
        direction: in_water,
    })
}

fn trace_dome(p: &DomePortParams, camera_ray: &Ray) -> Result<Ray, CameraError> {
    let inner = Sphere::new(p.center, p.radius)?;
    let hit_inner = intersect_ray_sphere(camera_ray, &inner)?;
    let in_glass = snell_refract(
        &camera_ray.direction,
        &inner.normal_at(&hit_inner),
        p.indices.air / p.indices.glass,
    )?;
    let (hit_outer, outer_normal) = if p.thickness > 0.0 {
        let outer = Sphere::new(p.center, p.radius + p.thickness)?;
        let hit = intersect_ray_sphere(&Ray { origin: hit_inner, direction: in_glass }, &outer)?;
        (hit, outer.normal_at(&hit))
    } else {
        (hit_inner, inner.normal_at(&hit_inner))
    };
    let in_water = snell_refract(&in_glass, &outer_normal, p.indices.glass / p.indices.water)?;
    Ok(Ray {
        origin: hit_outer,
        direction: in_water,
    })
}
