#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rsfm_core::camera::{DomePortParams, FlatPortParams, Pixel, PinholeIntrinsics, Port, RefractiveCameraModel};
use rsfm_core::estimation::PixelPointCorrespondence;
use rsfm_core::geometry::{SE3Pose, Vec3};

pub const TILTED_NORMAL: [f64; 3] = [0.166, 0.148, 0.975];

pub fn intrinsics() -> PinholeIntrinsics {
    PinholeIntrinsics::from_horizontal_fov(73.0, 1920, 1280).unwrap()
}

pub fn flat(normal: Vec3, d: f64) -> RefractiveCameraModel {
    RefractiveCameraModel::new(intrinsics(), Port::Flat(FlatPortParams::new(normal, d, 0.01).unwrap())).unwrap()
}

pub fn dome(center: Vec3) -> RefractiveCameraModel {
    RefractiveCameraModel::new(intrinsics(), Port::Dome(DomePortParams::new(center, 0.05, 0.007).unwrap())).unwrap()
}

pub fn tilted() -> RefractiveCameraModel {
    flat(Vec3::from(TILTED_NORMAL), 0.01)
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> SE3Pose {
    let aa = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    let c = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let r = SE3Pose::from_axis_angle(aa, Vec3::zeros()).rotation;
    SE3Pose::from_rotation_and_center(r, c)
}

pub fn random_pixel(rng: &mut ChaCha8Rng) -> Pixel {
    Pixel::new(rng.random_range(0.0..1920.0), rng.random_range(0.0..1280.0))
}

/// Camera-frame point seen at a random pixel at a random distance.
pub fn random_observation(rng: &mut ChaCha8Rng, model: &RefractiveCameraModel, depth: (f64, f64)) -> (Pixel, Vec3) {
    let p = random_pixel(rng);
    let ray = model.back_project(&p).unwrap();
    (p, ray.at(rng.random_range(depth.0..depth.1)))
}

pub fn abs_pose_instance(
    rng: &mut ChaCha8Rng,
    model: &RefractiveCameraModel,
    n: usize,
) -> (SE3Pose, Vec<PixelPointCorrespondence>) {
    let pose = random_pose(rng);
    let inv = pose.inverse();
    let corrs = (0..n)
        .map(|_| {
            let (pixel, xc) = random_observation(rng, model, (1.0, 10.0));
            PixelPointCorrespondence {
                pixel,
                point: inv.transform_point(&xc),
            }
        })
        .collect();
    (pose, corrs)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// Adds per-axis noise to every correspondence and replaces the first
/// `outliers` pixels with uniform ones.
pub fn corrupt(rng: &mut ChaCha8Rng, corrs: &mut [PixelPointCorrespondence], sigma: f64, outliers: usize) {
    for (i, c) in corrs.iter_mut().enumerate() {
        if i < outliers {
            c.pixel = random_pixel(rng);
        } else {
            c.pixel += Pixel::new(sigma * gaussian(rng), sigma * gaussian(rng));
        }
    }
}

/// Relative motion `X_b = R X_a + t` with a sizeable baseline.
pub fn random_relative(rng: &mut ChaCha8Rng) -> SE3Pose {
    let aa = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
    let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3));
    SE3Pose::from_axis_angle(aa, t)
}

/// Pixel pairs of points seen by both views, with the points in frame a.
pub fn two_view_instance(
    rng: &mut ChaCha8Rng,
    model: &RefractiveCameraModel,
    rel: &SE3Pose,
    n: usize,
) -> (Vec<(Pixel, Pixel)>, Vec<Vec3>) {
    let k = model.intrinsics;
    let mut pairs = Vec::new();
    let mut points = Vec::new();
    while pairs.len() < n {
        let (pa, xa) = random_observation(rng, model, (2.0, 10.0));
        let xb = rel.transform_point(&xa);
        if xb.z < 0.5 {
            continue;
        }
        if let Ok(pb) = model.forward_project(&xb) {
            if k.contains(&pb) {
                pairs.push((pa, pb));
                points.push(xa);
            }
        }
    }
    (pairs, points)
}

pub fn rotation_error_deg(a: &SE3Pose, b: &SE3Pose) -> f64 {
    a.rotation_angle_to(b).to_degrees()
}

pub fn direction_error_deg(a: &Vec3, b: &Vec3) -> f64 {
    a.normalize().dot(&b.normalize()).clamp(-1.0, 1.0).acos().to_degrees()
}

pub struct MultiViewScene {
    pub poses: Vec<SE3Pose>,
    pub points: Vec<Vec3>,
    pub observations: Vec<rsfm_core::optim::BundleObservation>,
}

/// Downward-looking strip of views over a slab of points, all observed
/// through `model`.
pub fn multi_view_scene(rng: &mut ChaCha8Rng, model: &RefractiveCameraModel, views: usize, points: usize) -> MultiViewScene {
    multi_view_scene_at(rng, model, views, points, (3.0, 6.0))
}

pub fn multi_view_scene_at(
    rng: &mut ChaCha8Rng,
    model: &RefractiveCameraModel,
    views: usize,
    points: usize,
    depth: (f64, f64),
) -> MultiViewScene {
    let poses: Vec<SE3Pose> = (0..views)
        .map(|v| {
            let c = Vec3::new(0.4 * v as f64, rng.random_range(-0.2..0.2), rng.random_range(-0.1..0.1));
            let aa = Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            SE3Pose::from_rotation_and_center(SE3Pose::from_axis_angle(aa, Vec3::zeros()).rotation, c)
        })
        .collect();
    let span = 0.4 * views as f64;
    let mut pts = Vec::new();
    let mut observations = Vec::new();
    while pts.len() < points {
        let x = Vec3::new(rng.random_range(-1.5..span + 1.5), rng.random_range(-1.5..1.5), rng.random_range(depth.0..depth.1));
        let obs: Vec<(usize, Pixel)> = poses
            .iter()
            .enumerate()
            .filter_map(|(v, pose)| {
                let p = model.forward_project(&pose.transform_point(&x)).ok()?;
                model.intrinsics.contains(&p).then_some((v, p))
            })
            .collect();
        if obs.len() < 2 {
            continue;
        }
        let id = pts.len();
        pts.push(x);
        observations.extend(obs.into_iter().map(|(view, pixel)| rsfm_core::optim::BundleObservation {
            view,
            point: id,
            pixel,
        }));
    }
    MultiViewScene {
        poses,
        points: pts,
        observations,
    }
}
