use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsfm_core::camera::{DomePortParams, FlatPortParams, Pixel, PinholeIntrinsics, Port, RefractiveCameraModel};
use rsfm_core::geometry::{closest_point_on_line_to_line, Vec3};

fn intrinsics() -> PinholeIntrinsics {
    PinholeIntrinsics::from_horizontal_fov(73.0, 1920, 1280).unwrap()
}

fn models() -> Vec<(&'static str, RefractiveCameraModel)> {
    let k = intrinsics();
    let flat = |n: Vec3, d: f64| Port::Flat(FlatPortParams::new(n, d, 0.01).unwrap());
    let dome = |c: Vec3| Port::Dome(DomePortParams::new(c, 0.05, 0.007).unwrap());
    vec![
        ("flat", RefractiveCameraModel::new(k, flat(Vec3::z(), 0.01)).unwrap()),
        ("flat-far", RefractiveCameraModel::new(k, flat(Vec3::z(), 0.05)).unwrap()),
        ("flat-tilted", RefractiveCameraModel::new(k, flat(Vec3::new(0.166, 0.148, 0.975), 0.01)).unwrap()),
        ("dome-axial", RefractiveCameraModel::new(k, dome(Vec3::new(0.0, 0.0, 0.003))).unwrap()),
        ("dome-sideward", RefractiveCameraModel::new(k, dome(Vec3::new(0.03, 0.0, 0.0))).unwrap()),
        ("dome-general", RefractiveCameraModel::new(k, dome(Vec3::new(0.004, -0.003, 0.005))).unwrap()),
    ]
}

#[test]
fn round_trip_over_random_pixels() {
    for (name, m) in models() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let p = Pixel::new(rng.random_range(0.0..1920.0), rng.random_range(0.0..1280.0));
            let ray = m.back_project(&p).unwrap();
            let q = m.forward_project(&ray.at(2.0)).unwrap();
            worst = worst.max((q - p).norm());
        }
        assert!(worst < 1e-6, "{name}: worst round-trip error {worst}");
    }
}

#[test]
fn forward_projection_lands_on_the_water_ray() {
    for (name, m) in models() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            // Stay inside the refracted field of view.
            let z = rng.random_range(1.0..10.0);
            let x = Vec3::new(rng.random_range(-0.5..0.5) * z, rng.random_range(-0.35..0.35) * z, z);
            let p = m.forward_project(&x).unwrap();
            let ray = m.back_project(&p).unwrap();
            let off = (x - ray.origin).cross(&ray.direction).norm();
            assert!(off < 1e-7 * x.norm(), "{name}: point is {off} m off its ray");
        }
    }
}

#[test]
fn pinhole_forward_projection_is_central() {
    let m = RefractiveCameraModel::pinhole(intrinsics());
    let x = Vec3::new(0.3, 0.2, 4.0);
    assert_eq!(m.forward_project(&x).unwrap(), m.intrinsics.project(&x).unwrap());
}

fn pixel_strategy() -> impl Strategy<Value = Pixel> {
    (0.0..1920.0f64, 0.0..1280.0f64).prop_map(|(x, y)| Pixel::new(x, y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn round_trip_over_depths(p in pixel_strategy(), depth in 0.5..20.0f64, which in 0usize..6) {
        let (_, m) = models().swap_remove(which);
        let ray = m.back_project(&p).unwrap();
        let q = m.forward_project(&ray.at(depth)).unwrap();
        prop_assert!((q - p).norm() < 1e-6);
    }

    #[test]
    fn virtual_camera_reproduces_pixel(p in pixel_strategy(), a in 0.3..5.0f64, b in 5.0..30.0f64, which in 0usize..6) {
        let (_, m) = models().swap_remove(which);
        let ray = m.back_project(&p).unwrap();
        let vc = m.virtual_camera(&p).unwrap();
        let pa = vc.project(&ray.at(a)).unwrap();
        let pb = vc.project(&ray.at(b)).unwrap();
        prop_assert!((pa - p).norm() < 1e-9);
        prop_assert!((pb - p).norm() < 1e-9);
    }

    #[test]
    fn water_rays_meet_the_refraction_axis(p in pixel_strategy(), which in 0usize..6) {
        let (_, m) = models().swap_remove(which);
        let axis = m.refraction_axis().unwrap();
        let ray = m.back_project(&p).unwrap();
        if let Ok((on_axis, _, dist)) = closest_point_on_line_to_line(&axis, &ray) {
            prop_assert!(dist < 1e-9, "distance {}", dist);
            let vc = m.virtual_camera(&p).unwrap();
            prop_assert!((vc.center - on_axis).norm() < 1e-12);
        }
    }
}
