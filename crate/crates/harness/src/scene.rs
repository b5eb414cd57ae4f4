//! Synthetic scenes: random single- and two-view setups for the pose
//! experiments and a lawn-mower survey for the pipeline.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rsfm_core::camera::{Pixel, RefractiveCameraModel};
use rsfm_core::geometry::{Mat3, SE3Pose, Vec3};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("only {visible} of {requested} points are visible")]
    GenerationFailed { visible: usize, requested: usize },
    #[error("invalid scene parameters: {0}")]
    Invalid(String),
}

/// Resampling attempts per requested point.
pub const MAX_ATTEMPTS: usize = 100;
/// Minimum fraction of requested points that must be generated.
pub const MIN_VISIBLE: f64 = 0.9;
/// Minimum distance between the two camera centers of a two-view scene.
pub const MIN_BASELINE: f64 = 0.25;

/// Mixes a base seed with indices into an independent 64-bit seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts
        .iter()
        .fold(mix(base.wrapping_add(0x9e37_79b9_7f4a_7c15)), |acc, &p| {
            mix(acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xff51_afd7_ed55_8ccd))
        })
}

pub fn rng_for(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// World-to-camera pose looking from `center` towards `target`, rolled about
/// the viewing axis.
pub fn look_at(center: &Vec3, target: &Vec3, roll: f64) -> SE3Pose {
    let z = (target - center).normalize();
    let up = if z.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let x = up.cross(&z).normalize();
    let y = z.cross(&x);
    let base = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let roll = SE3Pose::from_axis_angle(Vec3::z() * roll, Vec3::zeros()).rotation;
    SE3Pose::from_rotation_and_center(roll * base, *center)
}

/// Parameters of the random pose-experiment scenes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub points: usize,
    /// Depth range (m) along the first camera's optical axis.
    pub depth_range: [f64; 2],
    /// Edge length (m) of the cube camera centers are drawn from.
    pub pose_cube: f64,
    pub max_roll_deg: f64,
}

/// Ground truth and observations of a one- or two-view scene. Observations
/// are indexed `[view][point]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub model: RefractiveCameraModel,
    /// World-to-camera poses.
    pub poses: Vec<SE3Pose>,
    pub points: Vec<Vec3>,
    /// Observations through the refractive model.
    pub refracted: Vec<Vec<Pixel>>,
    /// Pinhole projections of the same camera-frame points.
    pub unrefracted: Vec<Vec<Pixel>>,
    pub inlier_mask: Vec<bool>,
}

impl SyntheticScene {
    /// Motion of the second view relative to the first, `X_1 = R X_0 + t`.
    pub fn relative_pose(&self) -> SE3Pose {
        self.poses[1].compose(&self.poses[0].inverse())
    }

    pub fn num_outliers(&self) -> usize {
        self.inlier_mask.iter().filter(|m| !**m).count()
    }
}

fn observe(model: &RefractiveCameraModel, pose: &SE3Pose, x: &Vec3) -> Option<(Pixel, Pixel)> {
    let xc = pose.transform_point(x);
    if !model.port.in_water(&xc) {
        return None;
    }
    let k = &model.intrinsics;
    let refracted = model.forward_project(&xc).ok().filter(|p| k.contains(p))?;
    let unrefracted = k.project(&xc).filter(|p| k.contains(p))?;
    Some((refracted, unrefracted))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(gaussian(rng), gaussian(rng), gaussian(rng));
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Draws camera poses and points visible in every view, both with and
/// without refraction.
pub fn generate_scene(
    model: &RefractiveCameraModel,
    params: &SceneParams,
    views: usize,
    seed: u64,
) -> Result<SyntheticScene, SceneError> {
    let [d0, d1] = params.depth_range;
    if !(views == 1 || views == 2) {
        return Err(SceneError::Invalid("one or two views supported".into()));
    }
    if !(d0 > 0.0 && d1 > d0) || params.points == 0 {
        return Err(SceneError::Invalid("empty point or depth range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 0.5 * params.pose_cube;
    let max_roll = params.max_roll_deg.to_radians();
    let in_cube = |rng: &mut ChaCha8Rng| {
        Vec3::new(
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
        )
    };
    let roll = |rng: &mut ChaCha8Rng| rng.random_range(-max_roll..=max_roll);

    let c0 = in_cube(&mut rng);
    let mut poses = vec![look_at(&c0, &(c0 + random_unit(&mut rng)), roll(&mut rng))];
    if views == 2 {
        let axis = poses[0].rotation.row(2).transpose();
        let target = c0 + axis * rng.random_range(d0 + 0.25 * (d1 - d0)..=d0 + 0.5 * (d1 - d0));
        let c1 = loop {
            let c = in_cube(&mut rng);
            if (c - c0).norm() >= MIN_BASELINE.min(params.pose_cube) {
                break c;
            }
        };
        poses.push(look_at(&c1, &target, roll(&mut rng)));
    }

    let k = model.intrinsics;
    let inv0 = poses[0].inverse();
    let (a, b) = (d0.powi(3), d1.powi(3));
    let mut points = Vec::with_capacity(params.points);
    let mut refracted = vec![Vec::with_capacity(params.points); views];
    let mut unrefracted = vec![Vec::with_capacity(params.points); views];
    for _ in 0..params.points {
        for _ in 0..MAX_ATTEMPTS {
            // Uniform over the frustum volume: depth density grows as z^2.
            let z = (a + (b - a) * rng.random::<f64>()).cbrt();
            let p = Pixel::new(rng.random_range(0.0..k.width as f64), rng.random_range(0.0..k.height as f64));
            let n = k.pixel_to_normalized(&p);
            let x = inv0.transform_point(&(Vec3::new(n.x, n.y, 1.0) * z));
            let obs: Option<Vec<(Pixel, Pixel)>> = poses.iter().map(|pose| observe(model, pose, &x)).collect();
            if let Some(obs) = obs {
                points.push(x);
                for (v, (r, u)) in obs.into_iter().enumerate() {
                    refracted[v].push(r);
                    unrefracted[v].push(u);
                }
                break;
            }
        }
    }
    if (points.len() as f64) < MIN_VISIBLE * params.points as f64 {
        return Err(SceneError::GenerationFailed {
            visible: points.len(),
            requested: params.points,
        });
    }
    let n = points.len();
    Ok(SyntheticScene {
        model: *model,
        poses,
        points,
        refracted,
        unrefracted,
        inlier_mask: vec![true; n],
    })
}

/// Adds per-axis Gaussian noise to every observation and replaces the last
/// view's observation of `round(fraction * n)` points with uniform pixels.
/// Refracted and pinhole observations receive identical perturbations.
pub fn corrupt(scene: &SyntheticScene, sigma_px: f64, outlier_fraction: f64, seed: u64) -> SyntheticScene {
    let mut out = scene.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = out.points.len();
    if sigma_px > 0.0 {
        for v in 0..out.refracted.len() {
            for i in 0..n {
                let e = Pixel::new(sigma_px * gaussian(&mut rng), sigma_px * gaussian(&mut rng));
                out.refracted[v][i] += e;
                out.unrefracted[v][i] += e;
            }
        }
    }
    let count = ((outlier_fraction * n as f64).round() as usize).min(n);
    let k = out.model.intrinsics;
    let last = out.refracted.len() - 1;
    let mut chosen = sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let p = Pixel::new(rng.random_range(0.0..k.width as f64), rng.random_range(0.0..k.height as f64));
        out.refracted[last][i] = p;
        out.unrefracted[last][i] = p;
        out.inlier_mask[i] = false;
    }
    out
}

/// Parameters of the lawn-mower survey.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurveyParams {
    pub views: usize,
    pub points: usize,
    pub row_length: usize,
    pub spacing: f64,
    pub row_spacing: f64,
    /// Depth range (m) of the surveyed surface below the cameras.
    pub floor_depth: [f64; 2],
}

/// Multi-view survey: world z points down, cameras look along +z.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyScene {
    pub poses: Vec<SE3Pose>,
    pub points: Vec<Vec3>,
    /// Per point, the views observing it and the refracted pixels.
    pub tracks: Vec<Vec<(usize, Pixel)>>,
    pub inlier_mask: Vec<bool>,
}

/// Camera centers along a boustrophedon path, in acquisition order.
pub fn lawn_mower_centers(params: &SurveyParams) -> Vec<Vec3> {
    (0..params.views)
        .map(|v| {
            let row = v / params.row_length;
            let col = v % params.row_length;
            let along = if row % 2 == 0 { col } else { params.row_length - 1 - col };
            Vec3::new(along as f64 * params.spacing, row as f64 * params.row_spacing, 0.0)
        })
        .collect()
}

pub fn generate_survey(
    model: &RefractiveCameraModel,
    params: &SurveyParams,
    seed: u64,
) -> Result<SurveyScene, SceneError> {
    let [f0, f1] = params.floor_depth;
    if params.views < 2 || params.row_length < 1 || !(f0 > 0.0 && f1 >= f0) {
        return Err(SceneError::Invalid("survey needs two views and a positive floor depth".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poses: Vec<SE3Pose> = lawn_mower_centers(params)
        .into_iter()
        .enumerate()
        .map(|(v, c)| {
            let c = c + Vec3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)) * 0.02;
            let aa = Vec3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)) * 0.03;
            let jitter = SE3Pose::from_axis_angle(aa, Vec3::zeros()).rotation;
            let heading = if (v / params.row_length) % 2 == 1 {
                SE3Pose::from_axis_angle(Vec3::new(0.0, 0.0, std::f64::consts::PI), Vec3::zeros()).rotation
            } else {
                Mat3::identity()
            };
            SE3Pose::from_rotation_and_center(jitter * heading, c)
        })
        .collect();
    let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
    for p in &poses {
        lo = lo.inf(&p.center());
        hi = hi.sup(&p.center());
    }
    let margin = 1.0;
    let k = model.intrinsics;
    let mut points = Vec::with_capacity(params.points);
    let mut tracks = Vec::with_capacity(params.points);
    for _ in 0..params.points {
        for _ in 0..MAX_ATTEMPTS {
            let x = Vec3::new(
                rng.random_range(lo.x - margin..=hi.x + margin),
                rng.random_range(lo.y - margin..=hi.y + margin),
                rng.random_range(f0..=f1),
            );
            let obs: Vec<(usize, Pixel)> = poses
                .iter()
                .enumerate()
                .filter_map(|(v, pose)| {
                    let p = model.forward_project(&pose.transform_point(&x)).ok()?;
                    k.contains(&p).then_some((v, p))
                })
                .collect();
            if obs.len() >= 2 {
                points.push(x);
                tracks.push(obs);
                break;
            }
        }
    }
    if (points.len() as f64) < MIN_VISIBLE * params.points as f64 {
        return Err(SceneError::GenerationFailed {
            visible: points.len(),
            requested: params.points,
        });
    }
    let n = points.len();
    Ok(SurveyScene {
        poses,
        points,
        tracks,
        inlier_mask: vec![true; n],
    })
}

/// Survey counterpart of [`corrupt`]: noise on every observation, and the
/// last observation of `round(fraction * n)` tracks replaced.
pub fn corrupt_survey(
    scene: &SurveyScene,
    model: &RefractiveCameraModel,
    sigma_px: f64,
    outlier_fraction: f64,
    seed: u64,
) -> SurveyScene {
    let mut out = scene.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if sigma_px > 0.0 {
        for track in &mut out.tracks {
            for (_, p) in track.iter_mut() {
                *p += Pixel::new(sigma_px * gaussian(&mut rng), sigma_px * gaussian(&mut rng));
            }
        }
    }
    let n = out.tracks.len();
    let count = ((outlier_fraction * n as f64).round() as usize).min(n);
    let k = model.intrinsics;
    let mut chosen = sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        if let Some(last) = out.tracks[i].last_mut() {
            last.1 = Pixel::new(rng.random_range(0.0..k.width as f64), rng.random_range(0.0..k.height as f64));
            out.inlier_mask[i] = false;
        }
    }
    out
}
