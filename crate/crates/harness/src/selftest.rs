//! Noise-free invariant suite run by the `selftest` subcommand.

use nalgebra::{Unit, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rsfm_core::camera::{Pixel, RefractiveCameraModel};
use rsfm_core::estimation::{estimate_absolute_pose_refractive, PixelPointCorrespondence};
use rsfm_core::geometry::{closest_point_on_line_to_line, snell_refract, Ray, SE3Pose, Vec3};
use rsfm_core::optim::{
    bundle_problem, BundleData, BundleObservation, BundleOptions, PortRefinement, PositionPrior, ScaleGauge,
};
use rsfm_core::ransac::RansacOptions;
use rsfm_core::solvers::{solve_five_point, solve_gp3p, solve_p3p, EssentialMatrix, PixelPair, RayPointCorrespondence};

use crate::config::{CameraSpec, ExperimentConfig, ExperimentKind, PipelineVariant, TILTED_NORMAL};
use crate::experiments::run_pipeline_variant;
use crate::scene::{corrupt, gaussian, generate_scene, generate_survey, rng_for, SceneParams, SurveyParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> Check {
    Check {
        name,
        passed: worst < tol,
        detail: format!("worst {worst:.3e}, tolerance {tol:.0e}"),
    }
}

/// The four port configurations the camera invariants are checked on.
pub fn port_configs() -> Vec<(String, RefractiveCameraModel)> {
    [
        CameraSpec::flat("flat", [0.0, 0.0, 1.0], 0.01),
        CameraSpec::flat("flat_tilted", TILTED_NORMAL, 0.02),
        CameraSpec::dome("dome", [0.0, 0.0, 0.003]),
        CameraSpec::dome("dome_decentered", [0.004, -0.003, 0.005]),
    ]
    .iter()
    .map(|c| (c.label(), c.to_model("selftest").expect("built-in camera is valid")))
    .collect()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Unit<Vec3> {
    Unit::new_normalize(Vec3::new(gaussian(rng), gaussian(rng), gaussian(rng)))
}

fn random_pixel(rng: &mut ChaCha8Rng, model: &RefractiveCameraModel) -> Pixel {
    let k = &model.intrinsics;
    Pixel::new(rng.random_range(0.0..k.width as f64), rng.random_range(0.0..k.height as f64))
}

fn random_pose(rng: &mut ChaCha8Rng) -> SE3Pose {
    let aa = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    SE3Pose::from_axis_angle(aa, t)
}

fn pose_error(a: &SE3Pose, b: &SE3Pose) -> f64 {
    (a.rotation - b.rotation).amax().max((a.translation - b.translation).amax())
}

fn best_match(cands: &[SE3Pose], truth: &SE3Pose) -> f64 {
    cands.iter().map(|c| pose_error(c, truth)).fold(f64::INFINITY, f64::min)
}

fn snell_checks(seed: u64) -> Vec<Check> {
    let mut rng = rng_for(seed, &[100]);
    let (mut reverse, mut plane): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let v = random_unit(&mut rng);
        let n = random_unit(&mut rng);
        let ratio = rng.random_range(0.5..2.0);
        if let Ok(out) = snell_refract(&v, &n, ratio) {
            let back = snell_refract(&out, &Unit::new_unchecked(-n.into_inner()), 1.0 / ratio)
                .map(|b| (b.into_inner() - v.into_inner()).amax())
                .unwrap_or(f64::INFINITY);
            reverse = reverse.max(back);
            plane = plane.max(v.cross(&n).dot(&out).abs());
        }
    }
    vec![
        check("snell reversibility", reverse, 1e-10),
        check("snell plane of incidence", plane, 1e-12),
    ]
}

fn camera_checks(seed: u64) -> Vec<Check> {
    let mut rng = rng_for(seed, &[101]);
    let (mut round_trip, mut reproduce, mut axial): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (_, m) in port_configs() {
        let axis = m.refraction_axis().ok();
        for _ in 0..1000 {
            let p = random_pixel(&mut rng, &m);
            let err = m.back_project(&p).and_then(|ray| {
                let q = m.forward_project(&ray.at(rng.random_range(0.5..20.0)))?;
                let vc = m.virtual_camera(&p)?;
                Ok((ray, (q - p).norm(), vc))
            });
            let Ok((ray, rt, vc)) = err else {
                round_trip = f64::INFINITY;
                continue;
            };
            round_trip = round_trip.max(rt);
            for depth in [0.3, 5.0, 30.0] {
                let e = vc.project(&ray.at(depth)).map_or(f64::INFINITY, |q| (q - p).norm());
                reproduce = reproduce.max(e);
            }
            if let Some(axis) = &axis {
                if let Ok((_, _, dist)) = closest_point_on_line_to_line(axis, &ray) {
                    axial = axial.max(dist);
                }
            }
        }
    }
    vec![
        check("projection round trip (px)", round_trip, 1e-6),
        check("virtual camera reproduces pixel (px)", reproduce, 1e-9),
        check("water rays meet the refraction axis (m)", axial, 1e-9),
    ]
}

fn world_point(rng: &mut ChaCha8Rng, pose: &SE3Pose) -> Vec3 {
    let z = rng.random_range(1.0..10.0);
    let cam = Vec3::new(rng.random_range(-0.6..0.6) * z, rng.random_range(-0.4..0.4) * z, z);
    pose.inverse().transform_point(&cam)
}

fn solver_checks(seed: u64) -> Vec<Check> {
    let mut rng = rng_for(seed, &[102]);
    let (mut p3p, mut gp3p, mut five): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let pose = random_pose(&mut rng);
        let central: [RayPointCorrespondence; 3] = std::array::from_fn(|_| {
            let x = world_point(&mut rng, &pose);
            RayPointCorrespondence { ray: Ray::new(Vec3::zeros(), pose.transform_point(&x)), point: x }
        });
        p3p = p3p.max(solve_p3p(&central).map_or(f64::INFINITY, |c| best_match(&c, &pose)));

        let axial: [RayPointCorrespondence; 3] = std::array::from_fn(|_| {
            let x = world_point(&mut rng, &pose);
            let origin = Vec3::new(0.0, 0.0, rng.random_range(-0.005..0.005));
            RayPointCorrespondence { ray: Ray::new(origin, pose.transform_point(&x) - origin), point: x }
        });
        gp3p = gp3p.max(solve_gp3p(&axial).map_or(f64::INFINITY, |c| best_match(&c, &pose)));

        let aa = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
        let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        let rel = SE3Pose::from_axis_angle(aa, t);
        let pairs: Vec<PixelPair> = (0..5)
            .map(|_| {
                let z = rng.random_range(2.0..10.0);
                let xa = Vec3::new(rng.random_range(-0.5..0.5) * z, rng.random_range(-0.4..0.4) * z, z);
                let xb = rel.transform_point(&xa);
                PixelPair::from_normalized(Vector2::new(xa.x / xa.z, xa.y / xa.z), Vector2::new(xb.x / xb.z, xb.y / xb.z))
            })
            .collect();
        let truth = EssentialMatrix::from_pose(&rel);
        let t = truth.0 / truth.0.norm();
        let err = solve_five_point(&pairs).map_or(f64::INFINITY, |sols| {
            sols.iter()
                .map(|e| {
                    let e = e.0 / e.0.norm();
                    (e - t).norm().min((e + t).norm())
                })
                .fold(f64::INFINITY, f64::min)
        });
        five = five.max(err);
    }
    vec![
        check("P3P synthesize and recover", p3p, 1e-8),
        check("GP3P synthesize and recover", gp3p, 1e-6),
        check("five-point synthesize and recover", five, 1e-6),
    ]
}

fn small_survey() -> SurveyParams {
    SurveyParams {
        views: 8,
        points: 300,
        row_length: 4,
        spacing: 0.3,
        row_spacing: 0.6,
        floor_depth: [2.0, 3.0],
    }
}

fn jacobian_check(seed: u64) -> Check {
    let mut rng = rng_for(seed, &[103]);
    let params = SurveyParams {
        views: 3,
        points: 8,
        row_length: 3,
        ..small_survey()
    };
    let mut worst: f64 = 0.0;
    for (_, model) in port_configs() {
        for _ in 0..5 {
            let Ok(scene) = generate_survey(&model, &params, rng.random()) else {
                return check("analytic vs numeric Jacobians", f64::INFINITY, 1e-5);
            };
            let mut jitter = |s: f64| Vec3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)) * s;
            let poses: Vec<SE3Pose> = scene
                .poses
                .iter()
                .map(|p| SE3Pose::from_axis_angle(jitter(0.005), jitter(0.01)).compose(p))
                .collect();
            let points: Vec<Vec3> = scene.points.iter().map(|x| x + jitter(0.01)).collect();
            let observations = scene
                .tracks
                .iter()
                .enumerate()
                .flat_map(|(i, t)| t.iter().map(move |(view, pixel)| BundleObservation { view: *view, point: i, pixel: *pixel }))
                .collect();
            let priors = scene
                .poses
                .iter()
                .map(|p| Some(PositionPrior { center: p.center() + jitter(0.01), weight: 10.0 }))
                .collect();
            let data = BundleData {
                cameras: vec![model],
                view_camera: vec![0; poses.len()],
                poses,
                points,
                observations,
                priors,
                anchor: 0,
            };
            let options = BundleOptions {
                refine_intrinsics: true,
                port: PortRefinement::all(),
                scale_gauge: ScaleGauge::PositionPriors,
                ..BundleOptions::default()
            };
            let Ok((problem, _)) = bundle_problem(&data, &options) else {
                return check("analytic vs numeric Jacobians", f64::INFINITY, 1e-5);
            };
            for i in 0..problem.num_residual_blocks() {
                let (Some(analytic), Some(numeric)) =
                    (problem.residual_block_jacobians(i), problem.residual_block_numeric_jacobians(i))
                else {
                    worst = f64::INFINITY;
                    continue;
                };
                for ((_, ja), (_, jn)) in analytic.iter().zip(&numeric) {
                    worst = worst.max((ja - jn).amax() / jn.amax().max(1e-8));
                }
            }
        }
    }
    check("analytic vs numeric Jacobians (relative)", worst, 1e-5)
}

fn ransac_determinism(seed: u64) -> Check {
    let (_, model) = port_configs().swap_remove(1);
    let params = SceneParams {
        points: 200,
        depth_range: [1.0, 10.0],
        pose_cube: 2.0,
        max_roll_deg: 15.0,
    };
    let run = || {
        let scene = generate_scene(&model, &params, 1, seed).ok()?;
        let noisy = corrupt(&scene, 1.0, 0.3, seed ^ 1);
        let corrs: Vec<PixelPointCorrespondence> = noisy.refracted[0]
            .iter()
            .zip(&noisy.points)
            .map(|(pixel, point)| PixelPointCorrespondence { pixel: *pixel, point: *point })
            .collect();
        let options = RansacOptions {
            threshold: 12.0,
            seed,
            ..RansacOptions::default()
        };
        estimate_absolute_pose_refractive(&model, &corrs, &options).ok()
    };
    let (a, b) = (run(), run());
    let same = a.is_some() && a == b;
    Check {
        name: "RANSAC determinism",
        passed: same,
        detail: if same { "bit-identical reports".into() } else { "reports differ or failed".into() },
    }
}

fn pipeline_check(seed: u64) -> Check {
    let mut cfg = ExperimentConfig::default_for(ExperimentKind::Pipeline);
    cfg.seed = seed;
    cfg.pipeline.sigma_px = 0.0;
    let p = small_survey();
    let (label, truth) = cfg.models().expect("default pipeline camera is valid").swap_remove(0);
    let Ok(scene) = generate_survey(&truth, &p, rng_for(seed, &[104]).random()) else {
        return check("noise-free pipeline model error (m)", f64::INFINITY, 1e-6);
    };
    let record = run_pipeline_variant(&cfg, &label, &truth, &scene, PipelineVariant::RsfmGt, 0);
    let err = if record.row.ok() { record.row.metric2 / 1000.0 } else { f64::INFINITY };
    check("noise-free pipeline model error (m)", err, 1e-6)
}

/// Runs every check; the suite passes if all of them do.
pub fn run_selftest(seed: u64) -> Vec<Check> {
    let mut checks = snell_checks(seed);
    checks.extend(camera_checks(seed));
    checks.extend(solver_checks(seed));
    checks.push(jacobian_check(seed));
    checks.push(ransac_determinism(seed));
    checks.push(pipeline_check(seed));
    checks
}
