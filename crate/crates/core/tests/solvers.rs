use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsfm_core::camera::{FlatPortParams, Pixel, PinholeIntrinsics, Port, RefractiveCameraModel, VirtualCamera};
use rsfm_core::geometry::{Ray, SE3Pose, Vec3};
use rsfm_core::solvers::{
    angular_residual, decompose_essential, sampson_distance, solve_five_point, solve_gp3p, solve_p3p,
    triangulate_dlt, EssentialMatrix, PixelPair, RayPointCorrespondence, SolverError, TriangulationObservation,
};

fn random_pose(rng: &mut ChaCha8Rng) -> SE3Pose {
    let aa = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    SE3Pose::from_axis_angle(aa, t)
}

/// Camera-frame point in front of the camera, then mapped to the world.
fn random_world_point(rng: &mut ChaCha8Rng, pose: &SE3Pose) -> Vec3 {
    let z = rng.random_range(1.0..10.0);
    let cam = Vec3::new(rng.random_range(-0.6..0.6) * z, rng.random_range(-0.4..0.4) * z, z);
    pose.inverse().transform_point(&cam)
}

fn pose_error(a: &SE3Pose, b: &SE3Pose) -> f64 {
    (a.rotation - b.rotation).amax().max((a.translation - b.translation).amax())
}

fn best_match(cands: &[SE3Pose], truth: &SE3Pose) -> f64 {
    cands.iter().map(|c| pose_error(c, truth)).fold(f64::INFINITY, f64::min)
}

/// Rays with origins spread along a common axis, as for virtual cameras.
fn axial_instance(rng: &mut ChaCha8Rng, spread: f64) -> (SE3Pose, [RayPointCorrespondence; 3]) {
    let pose = random_pose(rng);
    let corrs = std::array::from_fn(|_| {
        let x = random_world_point(rng, &pose);
        let origin = if spread > 0.0 { Vec3::new(0.0, 0.0, rng.random_range(-spread..spread)) } else { Vec3::zeros() };
        let dir = pose.transform_point(&x) - origin;
        RayPointCorrespondence { ray: Ray::new(origin, dir), point: x }
    });
    (pose, corrs)
}

#[test]
fn p3p_synthesize_and_recover() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (pose, corrs) = axial_instance(&mut rng, 0.0);
        let cands = solve_p3p(&corrs).unwrap();
        let e = best_match(&cands, &pose);
        worst = worst.max(e);
        for c in &cands {
            for corr in &corrs {
                assert!(angular_residual(c, corr) < 1e-8);
            }
        }
    }
    assert!(worst < 1e-8, "worst P3P error {worst}");
}

#[test]
fn p3p_rejects_collinear_points() {
    let pose = SE3Pose::identity();
    let corrs = std::array::from_fn(|i| {
        let x = Vec3::new(i as f64 * 0.5, 0.0, 3.0);
        RayPointCorrespondence { ray: Ray::new(Vec3::zeros(), pose.transform_point(&x)), point: x }
    });
    assert_eq!(solve_p3p(&corrs), Err(SolverError::Degenerate));
    assert_eq!(solve_gp3p(&corrs), Err(SolverError::Degenerate));
}

#[test]
fn p3p_filters_points_behind_the_camera() {
    let corrs: [RayPointCorrespondence; 3] = std::array::from_fn(|i| {
        let x = Vec3::new(i as f64 * 0.5, (i * i) as f64 * 0.3, 3.0);
        // Rays point away from the points.
        RayPointCorrespondence { ray: Ray::new(Vec3::zeros(), -x), point: x }
    });
    let cands = solve_p3p(&corrs).unwrap();
    for c in &cands {
        for corr in &corrs {
            let v = c.transform_point(&corr.point);
            assert!(v.dot(&corr.ray.direction) > 0.0);
        }
    }
}

#[test]
fn gp3p_synthesize_and_recover_flat_port_regime() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (pose, corrs) = axial_instance(&mut rng, 0.005);
        let cands = solve_gp3p(&corrs).unwrap();
        worst = worst.max(best_match(&cands, &pose));
        for c in &cands {
            for corr in &corrs {
                assert!(angular_residual(c, corr) < 1e-8);
            }
        }
    }
    assert!(worst < 1e-6, "worst GP3P error {worst}");
}

#[test]
fn gp3p_synthesize_and_recover_general_origins() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let pose = random_pose(&mut rng);
        let corrs = std::array::from_fn(|_| {
            let x = random_world_point(&mut rng, &pose);
            let origin = Vec3::new(rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03));
            RayPointCorrespondence { ray: Ray::new(origin, pose.transform_point(&x) - origin), point: x }
        });
        let cands = solve_gp3p(&corrs).unwrap();
        let e = best_match(&cands, &pose);
        worst = worst.max(e);
    }
    assert!(worst < 1e-6, "worst GP3P error {worst}");
}

#[test]
fn gp3p_matches_p3p_for_central_rays() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..300 {
        let (_, corrs) = axial_instance(&mut rng, 0.0);
        let central = solve_p3p(&corrs).unwrap();
        let general = solve_gp3p(&corrs).unwrap();
        for p in &central {
            assert!(best_match(&general, p) < 1e-8);
        }
    }
}

#[test]
fn gp3p_is_continuous_towards_the_central_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (pose, base) = axial_instance(&mut rng, 0.0);
        let offsets: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let mut last: Option<SE3Pose> = None;
        for k in 0..=20 {
            let spread = 0.01 * (1.0 - k as f64 / 20.0);
            let corrs: [RayPointCorrespondence; 3] = std::array::from_fn(|i| {
                let origin = Vec3::new(0.0, 0.0, spread * offsets[i]);
                let dir = pose.transform_point(&base[i].point) - origin;
                RayPointCorrespondence { ray: Ray::new(origin, dir), point: base[i].point }
            });
            let cands = solve_gp3p(&corrs).unwrap();
            let best = cands
                .iter()
                .min_by(|a, b| pose_error(a, &pose).total_cmp(&pose_error(b, &pose)))
                .copied()
                .unwrap();
            if let Some(prev) = last {
                assert!(pose_error(&prev, &best) < 1e-4);
            }
            last = Some(best);
        }
    }
}

#[test]
fn gp3p_dome_decentered_instance() {
    let k = PinholeIntrinsics::from_horizontal_fov(73.0, 1920, 1280).unwrap();
    let dome = rsfm_core::camera::DomePortParams::new(Vec3::new(0.0, 0.0, 0.003), 0.05, 0.007).unwrap();
    let model = RefractiveCameraModel::new(k, Port::Dome(dome)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let pose = random_pose(&mut rng);
        let corrs = std::array::from_fn(|_| {
            let x = random_world_point(&mut rng, &pose);
            let pix = model.forward_project(&pose.transform_point(&x)).unwrap();
            RayPointCorrespondence { ray: model.back_project(&pix).unwrap(), point: x }
        });
        assert!(best_match(&solve_gp3p(&corrs).unwrap(), &pose) < 1e-6);
    }
}

fn random_pairs(rng: &mut ChaCha8Rng, rel: &SE3Pose, n: usize) -> Vec<PixelPair> {
    (0..n)
        .map(|_| {
            let z = rng.random_range(2.0..10.0);
            let xa = Vec3::new(rng.random_range(-0.5..0.5) * z, rng.random_range(-0.4..0.4) * z, z);
            let xb = rel.transform_point(&xa);
            PixelPair::from_normalized(Vector2::new(xa.x / xa.z, xa.y / xa.z), Vector2::new(xb.x / xb.z, xb.y / xb.z))
        })
        .collect()
}

fn random_relative(rng: &mut ChaCha8Rng) -> SE3Pose {
    let aa = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
    let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    SE3Pose::from_axis_angle(aa, t)
}

fn essential_distance(a: &EssentialMatrix, b: &EssentialMatrix) -> f64 {
    let (a, b) = (a.0 / a.0.norm(), b.0 / b.0.norm());
    (a - b).norm().min((a + b).norm())
}

#[test]
fn five_point_synthesize_and_recover() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let rel = random_relative(&mut rng);
        let pairs = random_pairs(&mut rng, &rel, 5);
        let sols = solve_five_point(&pairs).unwrap();
        let truth = EssentialMatrix::from_pose(&rel);
        for e in &sols {
            for p in &pairs {
                assert!(e.algebraic_residual(p).abs() < 1e-8);
            }
            assert!(e.trace_constraint_residual() < 1e-8);
        }
        worst = worst.max(sols.iter().map(|e| essential_distance(e, &truth)).fold(f64::INFINITY, f64::min));
    }
    assert!(worst < 1e-6, "worst five-point error {worst}");
}

#[test]
fn five_point_identical_pairs_fail() {
    let p = PixelPair::from_normalized(Vector2::new(0.1, 0.2), Vector2::new(0.15, 0.2));
    match solve_five_point(&[p; 5]) {
        Err(SolverError::NumericalFailure(_)) => {}
        Ok(v) => assert!(v.is_empty()),
        Err(e) => panic!("unexpected {e:?}"),
    }
}

#[test]
fn pure_rotation_has_no_parallax() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rel = SE3Pose::from_axis_angle(Vec3::new(0.05, -0.1, 0.02), Vec3::zeros());
    let pairs = random_pairs(&mut rng, &rel, 30);
    let sols = solve_five_point(&pairs[..5]).unwrap_or_default();
    for e in sols {
        assert_eq!(decompose_essential(&e, &pairs), Err(SolverError::NoParallax));
    }
}

#[test]
fn decomposition_recovers_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let rel = random_relative(&mut rng);
        let pairs = random_pairs(&mut rng, &rel, 20);
        let pose = decompose_essential(&EssentialMatrix::from_pose(&rel), &pairs).unwrap();
        assert!(pose.rotation_angle_to(&rel).to_degrees() < 1e-6);
        let dir = rel.translation.normalize();
        assert!(pose.translation.angle(&dir).to_degrees() < 0.01);
        assert!((pose.translation.norm() - 1.0).abs() < 1e-12);
        // Scaling the scene does not change the decision.
        let scaled = SE3Pose::new(rel.rotation, rel.translation * 7.0);
        let again = decompose_essential(&EssentialMatrix::from_pose(&scaled), &pairs).unwrap();
        assert!(pose_error(&again, &pose) < 1e-9);
    }
}

#[test]
fn decomposition_of_mirrored_points_fails() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let rel = random_relative(&mut rng);
    let e = EssentialMatrix::from_pose(&rel);
    // Points behind both cameras: negate depth in a and use the true motion.
    let pairs: Vec<PixelPair> = (0..20)
        .map(|_| {
            let z = -rng.random_range(2.0..10.0);
            let xa = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), z);
            let xb = rel.transform_point(&xa);
            PixelPair::from_normalized(Vector2::new(xa.x / xa.z, xa.y / xa.z), Vector2::new(xb.x / xb.z, xb.y / xb.z))
        })
        .filter(|_| true)
        .collect();
    let got = decompose_essential(&e, &pairs);
    // Either rejected, or the chosen candidate differs from the true motion.
    if let Ok(p) = got {
        assert!(p.rotation_angle_to(&rel) > 1e-3 || p.translation.dot(&rel.translation) < 0.0);
    }
}

#[test]
fn decomposition_single_pair_returns_candidate() {
    let rel = SE3Pose::from_axis_angle(Vec3::new(0.0, 0.1, 0.0), Vec3::new(1.0, 0.0, 0.0));
    let xa = Vec3::new(0.2, 0.1, 3.0);
    let xb = rel.transform_point(&xa);
    let pair = PixelPair::from_normalized(Vector2::new(xa.x / xa.z, xa.y / xa.z), Vector2::new(xb.x / xb.z, xb.y / xb.z));
    assert!(decompose_essential(&EssentialMatrix::from_pose(&rel), &[pair]).is_ok());
}

#[test]
fn sampson_distance_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rel = random_relative(&mut rng);
    let e = EssentialMatrix::from_pose(&rel).0;
    for p in random_pairs(&mut rng, &rel, 50) {
        assert!(sampson_distance(&e, &p.norm_a, &p.norm_b) < 1e-12);
        // Perturb and compare to the exact distance, found by iterating the
        // first-order correction to convergence.
        let da = Vector2::new(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3));
        let db = Vector2::new(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3));
        let (a0, b0) = (p.norm_a + da, p.norm_b + db);
        let sd = sampson_distance(&e, &a0, &b0);
        let (mut a, mut b) = (a0, b0);
        for _ in 0..50 {
            let ha = Vec3::new(a.x, a.y, 1.0);
            let hb = Vec3::new(b.x, b.y, 1.0);
            let (ea, etb) = (e * ha, e.transpose() * hb);
            // Linearize at (a, b) and project (a0, b0) onto the constraint.
            let g = nalgebra::Vector4::new(etb.x, etb.y, ea.x, ea.y);
            let f = hb.dot(&ea);
            let x = nalgebra::Vector4::new(a0.x - a.x, a0.y - a.y, b0.x - b.x, b0.y - b.y);
            let lam = (f + g.dot(&x)) / g.norm_squared();
            let corr = x - g * lam;
            a = Vector2::new(a.x + corr[0], a.y + corr[1]);
            b = Vector2::new(b.x + corr[2], b.y + corr[3]);
        }
        let exact = ((a - a0).norm_squared() + (b - b0).norm_squared()).sqrt();
        if exact > 1e-6 {
            assert!((sd - exact).abs() < 0.1 * exact, "sampson {sd} exact {exact}");
        }
    }
    let zero = nalgebra::Matrix3::zeros();
    let v = sampson_distance(&zero, &Vector2::new(0.1, 0.1), &Vector2::new(0.2, 0.1));
    assert!(v.is_finite() && v == 0.0);
}

fn pinhole_vc(k: &PinholeIntrinsics) -> VirtualCamera {
    VirtualCamera { center: Vec3::zeros(), focal: k.fx, principal_point: Pixel::new(k.cx, k.cy) }
}

#[test]
fn triangulation_pinhole_exact() {
    let k = PinholeIntrinsics::from_horizontal_fov(73.0, 1920, 1280).unwrap();
    let x = Vec3::new(0.3, -0.2, 4.0);
    let poses = [SE3Pose::identity(), SE3Pose::from_axis_angle(Vec3::new(0.0, -0.1, 0.0), Vec3::new(-0.5, 0.0, 0.0))];
    let obs: Vec<TriangulationObservation> = poses
        .iter()
        .map(|p| TriangulationObservation {
            virtual_camera: pinhole_vc(&k),
            pose: *p,
            pixel: k.project(&p.transform_point(&x)).unwrap(),
        })
        .collect();
    let got = triangulate_dlt(&obs, 1f64.to_radians()).unwrap();
    assert!((got - x).norm() < 1e-9);
}

#[test]
fn triangulation_flat_port_exact() {
    let k = PinholeIntrinsics::from_horizontal_fov(73.0, 1920, 1280).unwrap();
    let m = RefractiveCameraModel::new(k, Port::Flat(FlatPortParams::new(Vec3::z(), 0.01, 0.01).unwrap())).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let x = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 2.0);
        let poses = [SE3Pose::identity(), SE3Pose::from_axis_angle(Vec3::new(0.0, 0.1, 0.0), Vec3::new(-0.4, 0.05, 0.0))];
        let obs: Vec<TriangulationObservation> = poses
            .iter()
            .map(|p| {
                let pixel = m.forward_project(&p.transform_point(&x)).unwrap();
                TriangulationObservation { virtual_camera: m.virtual_camera(&pixel).unwrap(), pose: *p, pixel }
            })
            .collect();
        let got = triangulate_dlt(&obs, 1f64.to_radians()).unwrap();
        assert!((got - x).norm() < 1e-7, "error {}", (got - x).norm());
    }
}

#[test]
fn triangulation_rejects_parallel_rays() {
    let k = PinholeIntrinsics::from_horizontal_fov(73.0, 1920, 1280).unwrap();
    let c = Pixel::new(k.cx, k.cy);
    let obs = [
        TriangulationObservation { virtual_camera: pinhole_vc(&k), pose: SE3Pose::identity(), pixel: c },
        TriangulationObservation {
            virtual_camera: pinhole_vc(&k),
            pose: SE3Pose::new(nalgebra::Matrix3::identity(), Vec3::new(-0.1, 0.0, 0.0)),
            pixel: c,
        },
    ];
    assert_eq!(triangulate_dlt(&obs, 1f64.to_radians()), Err(SolverError::InsufficientAngle));
}
