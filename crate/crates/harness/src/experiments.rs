//! Experiment loops and result aggregation.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use rsfm_core::camera::{fit_best_approx_pinhole, ApproxFitOptions, Pixel, Port, RefractiveCameraModel};
use rsfm_core::estimation::{
    estimate_absolute_pose_central, estimate_absolute_pose_refractive, estimate_relative_pose_central,
    PixelPointCorrespondence, RefractiveRelativePose, RelativePoseEstimate, RelativePoseOptions,
};
use rsfm_core::geometry::{SE3Pose, Vec3};
use rsfm_core::optim::{refine_relative_pose_virtual_epipolar, PortRefinement, PositionPrior, RelativeRefineOptions};
use rsfm_core::ransac::RansacOptions;
use rsfm_core::sfm::{align_and_score, run_incremental, AlignMode, ReconstructionState, SfmOptions, Track};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, ExperimentKind, PipelineVariant};
use crate::scene::{
    corrupt, corrupt_survey, derive_seed, gaussian, generate_scene, generate_survey, rng_for, SceneParams,
    SurveyParams, SurveyScene,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Setup(String),
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: &'static str,
    pub variant: &'static str,
    pub port: String,
    pub sigma_px: f64,
    pub outlier_frac: f64,
    pub trial: usize,
    pub rot_err_deg: f64,
    pub trans_err: f64,
    pub metric2: f64,
    pub inlier_ratio: f64,
    pub status: String,
}

impl ResultRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Estimated and true port parameters of a pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PortSummary {
    pub normal_x: Option<f64>,
    pub normal_y: Option<f64>,
    pub normal_z: Option<f64>,
    pub dist: Option<f64>,
    pub center_x: Option<f64>,
    pub center_y: Option<f64>,
    pub center_z: Option<f64>,
}

impl PortSummary {
    pub fn of(model: &RefractiveCameraModel) -> Self {
        match model.port {
            Port::None => Self::default(),
            Port::Flat(f) => Self {
                normal_x: Some(f.normal.x),
                normal_y: Some(f.normal.y),
                normal_z: Some(f.normal.z),
                dist: Some(f.distance),
                ..Self::default()
            },
            Port::Dome(d) => Self {
                center_x: Some(d.center.x),
                center_y: Some(d.center.y),
                center_z: Some(d.center.z),
                ..Self::default()
            },
        }
    }
}

/// Result of one pipeline variant on one scene.
#[derive(Debug, Clone)]
pub struct PipelineRecord {
    pub row: ResultRow,
    pub rms_px: f64,
    pub registered_views: usize,
    pub points: usize,
    pub runtime_s: f64,
    pub truth: RefractiveCameraModel,
    /// Camera model after reconstruction; `None` if the run failed.
    pub estimated: Option<RefractiveCameraModel>,
    /// Final state, kept for the exported trial.
    pub state: Option<ReconstructionState>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub pipeline: Vec<PipelineRecord>,
}

impl ExperimentOutput {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.ok()).count()
    }
}

fn failed_row(
    experiment: &'static str,
    variant: &'static str,
    port: &str,
    sigma: f64,
    outliers: f64,
    trial: usize,
    reason: String,
) -> ResultRow {
    ResultRow {
        experiment,
        variant,
        port: port.to_string(),
        sigma_px: sigma,
        outlier_frac: outliers,
        trial,
        rot_err_deg: f64::NAN,
        trans_err: f64::NAN,
        metric2: f64::NAN,
        inlier_ratio: f64::NAN,
        status: format!("failed: {reason}"),
    }
}

pub fn rotation_error_deg(a: &SE3Pose, b: &SE3Pose) -> f64 {
    a.rotation_angle_to(b).to_degrees()
}

pub fn direction_error_deg(a: &Vec3, b: &Vec3) -> f64 {
    let (a, b) = (a.normalize(), b.normalize());
    a.cross(&b).norm().atan2(a.dot(&b)).to_degrees()
}

fn scene_params(cfg: &ExperimentConfig) -> SceneParams {
    SceneParams {
        points: cfg.points,
        depth_range: cfg.depth_range,
        pose_cube: cfg.pose_cube,
        max_roll_deg: cfg.max_roll_deg,
    }
}

/// Seed domains for independent random streams per trial.
const SCENE: u64 = 0;
const NOISE: u64 = 1;
const RANSAC: u64 = 2;
const PRIORS: u64 = 3;

fn sweep_jobs(cfg: &ExperimentConfig, ports: usize) -> Vec<(usize, usize, usize)> {
    let mut jobs = Vec::new();
    for p in 0..ports {
        for s in 0..cfg.sigmas.len() {
            for t in 0..cfg.trials {
                jobs.push((p, s, t));
            }
        }
    }
    jobs
}

pub fn run_abs_pose_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, ExperimentError> {
    let models = cfg.models()?;
    let params = scene_params(cfg);
    let rows: Vec<Vec<ResultRow>> = sweep_jobs(cfg, models.len())
        .into_par_iter()
        .map(|(p, s, trial)| {
            let (label, model) = &models[p];
            let sigma = cfg.sigmas[s];
            let outliers = cfg.outlier_fraction;
            let variants = ["gp3p", "p3p"];
            let scene = match generate_scene(model, &params, 1, derive_seed(cfg.seed, &[SCENE, trial as u64])) {
                Ok(scene) => corrupt(&scene, sigma, outliers, derive_seed(cfg.seed, &[NOISE, trial as u64, s as u64])),
                Err(e) => {
                    return variants
                        .iter()
                        .map(|v| failed_row("abs_pose", v, label, sigma, outliers, trial, e.to_string()))
                        .collect()
                }
            };
            let truth = scene.poses[0];
            let options = RansacOptions {
                threshold: cfg.abs_threshold_px,
                seed: derive_seed(cfg.seed, &[RANSAC, trial as u64, s as u64]),
                ..RansacOptions::default()
            };
            let corrs = |pixels: &[Pixel]| -> Vec<PixelPointCorrespondence> {
                pixels
                    .iter()
                    .zip(&scene.points)
                    .map(|(pixel, point)| PixelPointCorrespondence { pixel: *pixel, point: *point })
                    .collect()
            };
            let gp3p = estimate_absolute_pose_refractive(model, &corrs(&scene.refracted[0]), &options);
            let p3p = estimate_absolute_pose_central(&model.intrinsics, &corrs(&scene.unrefracted[0]), &options);
            [("gp3p", gp3p), ("p3p", p3p)]
                .into_iter()
                .map(|(variant, result)| match result {
                    Ok(report) => ResultRow {
                        experiment: "abs_pose",
                        variant,
                        port: label.clone(),
                        sigma_px: sigma,
                        outlier_frac: outliers,
                        trial,
                        rot_err_deg: rotation_error_deg(&report.model, &truth),
                        trans_err: 1000.0 * (report.model.translation - truth.translation).norm(),
                        metric2: 1000.0 * (report.model.center() - truth.center()).norm(),
                        inlier_ratio: report.inlier_ratio,
                        status: "ok".into(),
                    },
                    Err(e) => failed_row("abs_pose", variant, label, sigma, outliers, trial, e.to_string()),
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

fn relative_row(
    variant: &'static str,
    port: &str,
    sigma: f64,
    outliers: f64,
    trial: usize,
    pose: &SE3Pose,
    truth: &SE3Pose,
    inlier_ratio: f64,
) -> ResultRow {
    let t = pose.translation.normalize();
    let t_gt = truth.translation.normalize();
    ResultRow {
        experiment: "rel_pose",
        variant,
        port: port.to_string(),
        sigma_px: sigma,
        outlier_frac: outliers,
        trial,
        rot_err_deg: rotation_error_deg(pose, truth),
        trans_err: (t - t_gt).norm(),
        metric2: direction_error_deg(&t, &t_gt),
        inlier_ratio,
        status: "ok".into(),
    }
}

pub fn run_rel_pose_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, ExperimentError> {
    let models = cfg.models()?;
    let fit = ApproxFitOptions::default();
    let estimators: Vec<RefractiveRelativePose> = models
        .iter()
        .map(|(label, m)| {
            RefractiveRelativePose::new(m, m, &fit)
                .map_err(|e| ExperimentError::Setup(format!("pinhole fit for camera `{label}` failed: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let params = scene_params(cfg);
    let rows: Vec<Vec<ResultRow>> = sweep_jobs(cfg, models.len())
        .into_par_iter()
        .map(|(p, s, trial)| {
            let (label, model) = &models[p];
            let est = &estimators[p];
            let sigma = cfg.sigmas[s];
            let outliers = cfg.outlier_fraction;
            let variants = ["bestapprox", "bestapprox_refined", "five_point"];
            let fail = |v: &'static str, e: String| failed_row("rel_pose", v, label, sigma, outliers, trial, e);
            let scene = match generate_scene(model, &params, 2, derive_seed(cfg.seed, &[SCENE, trial as u64])) {
                Ok(scene) => corrupt(&scene, sigma, outliers, derive_seed(cfg.seed, &[NOISE, trial as u64, s as u64])),
                Err(e) => return variants.iter().map(|v| fail(v, e.to_string())).collect(),
            };
            let truth = scene.relative_pose();
            let ransac = RansacOptions {
                seed: derive_seed(cfg.seed, &[RANSAC, trial as u64, s as u64]),
                ..RansacOptions::default()
            };
            let pairs = |obs: &[Vec<Pixel>]| -> Vec<(Pixel, Pixel)> { obs[0].iter().copied().zip(obs[1].iter().copied()).collect() };
            let refracted = pairs(&scene.refracted);
            let options = RelativePoseOptions {
                ransac: RansacOptions {
                    threshold: cfg.rel_threshold_px / est.prox_a.f_mean(),
                    ..ransac
                },
                virtual_threshold: cfg.rel_threshold_px / model.intrinsics.f_mean(),
            };
            let mut rows = Vec::with_capacity(3);
            match est.estimate(&refracted, &options) {
                Ok(e) => {
                    rows.push(relative_row("bestapprox", label, sigma, outliers, trial, &e.pose, &truth, e.virtual_inlier_ratio));
                    rows.push(refined_row(&e, model, &refracted, label, sigma, outliers, trial, &truth));
                }
                Err(e) => {
                    rows.push(fail("bestapprox", e.to_string()));
                    rows.push(fail("bestapprox_refined", e.to_string()));
                }
            }
            let k = model.intrinsics;
            let central = RelativePoseOptions {
                ransac: RansacOptions {
                    threshold: cfg.rel_threshold_px / k.f_mean(),
                    ..ransac
                },
                virtual_threshold: cfg.rel_threshold_px / k.f_mean(),
            };
            rows.push(match estimate_relative_pose_central(&k, &k, &pairs(&scene.unrefracted), &central) {
                Ok(e) => relative_row("five_point", label, sigma, outliers, trial, &e.pose, &truth, e.inlier_ratio()),
                Err(e) => fail("five_point", e.to_string()),
            });
            rows
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

#[allow(clippy::too_many_arguments)]
fn refined_row(
    estimate: &RelativePoseEstimate,
    model: &RefractiveCameraModel,
    pairs: &[(Pixel, Pixel)],
    label: &str,
    sigma: f64,
    outliers: f64,
    trial: usize,
    truth: &SE3Pose,
) -> ResultRow {
    let inliers: Vec<(Pixel, Pixel)> = pairs
        .iter()
        .zip(&estimate.virtual_inlier_mask)
        .filter(|(_, m)| **m)
        .map(|(p, _)| *p)
        .collect();
    let options = RelativeRefineOptions {
        free_scale: false,
        ..RelativeRefineOptions::default()
    };
    match refine_relative_pose_virtual_epipolar(model, model, &inliers, &estimate.pose, &options) {
        Ok(r) => relative_row(
            "bestapprox_refined",
            label,
            sigma,
            outliers,
            trial,
            &r.pose,
            truth,
            estimate.virtual_inlier_ratio,
        ),
        Err(e) => failed_row("rel_pose", "bestapprox_refined", label, sigma, outliers, trial, e.to_string()),
    }
}

fn survey_params(cfg: &ExperimentConfig) -> SurveyParams {
    let p = &cfg.pipeline;
    SurveyParams {
        views: p.views,
        points: p.points,
        row_length: p.row_length,
        spacing: p.spacing,
        row_spacing: p.row_spacing,
        floor_depth: p.floor_depth,
    }
}

/// Camera model a pipeline variant starts from.
pub fn variant_model(
    cfg: &ExperimentConfig,
    truth: &RefractiveCameraModel,
    variant: PipelineVariant,
) -> Result<RefractiveCameraModel, String> {
    let p = &cfg.pipeline;
    match variant {
        PipelineVariant::RsfmGt => Ok(*truth),
        PipelineVariant::Uwpinhole => {
            let fit = ApproxFitOptions {
                depth: p.uw_fit_depth,
                ..ApproxFitOptions::default()
            };
            fit_best_approx_pinhole(truth, &fit)
                .map(|f| RefractiveCameraModel::pinhole(f.intrinsics))
                .map_err(|e| e.to_string())
        }
        PipelineVariant::RsfmRefined => {
            let port = match truth.port {
                Port::None => Port::None,
                Port::Flat(mut f) => {
                    f.normal = nalgebra::Unit::new_normalize(Vec3::from(p.init_normal));
                    if p.priors {
                        f.distance *= p.init_dist_factor;
                    }
                    Port::Flat(f)
                }
                Port::Dome(mut d) => {
                    d.center = Vec3::from(p.init_center);
                    Port::Dome(d)
                }
            };
            RefractiveCameraModel::new(truth.intrinsics, port).map_err(|e| e.to_string())
        }
    }
}

fn survey_state(scene: &SurveyScene, model: RefractiveCameraModel) -> ReconstructionState {
    let tracks = scene
        .tracks
        .iter()
        .zip(&scene.points)
        .enumerate()
        .map(|(i, (obs, x))| {
            let mut t = Track::new(i, obs.clone());
            t.ground_truth = Some(*x);
            t
        })
        .collect();
    ReconstructionState::new(vec![model], vec![0; scene.poses.len()], tracks).expect("survey tracks are well formed")
}

/// Runs one pipeline variant on a corrupted survey.
pub fn run_pipeline_variant(
    cfg: &ExperimentConfig,
    label: &str,
    truth: &RefractiveCameraModel,
    scene: &SurveyScene,
    variant: PipelineVariant,
    trial: usize,
) -> PipelineRecord {
    let p = &cfg.pipeline;
    let fail = |reason: String| PipelineRecord {
        row: failed_row("pipeline", variant.name(), label, p.sigma_px, p.outlier_fraction, trial, reason),
        rms_px: f64::NAN,
        registered_views: 0,
        points: 0,
        runtime_s: 0.0,
        truth: *truth,
        estimated: None,
        state: None,
    };
    let model = match variant_model(cfg, truth, variant) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let mut state = survey_state(scene, model);
    if p.priors {
        let mut rng = rng_for(cfg.seed, &[PRIORS, trial as u64]);
        for (view, pose) in state.views.iter_mut().zip(&scene.poses) {
            let noise = Vec3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)) * p.prior_sigma_m;
            view.prior = Some(PositionPrior {
                center: pose.center() + noise,
                weight: p.prior_weight,
            });
        }
    }
    let options = SfmOptions {
        absolute: RansacOptions {
            threshold: cfg.abs_threshold_px,
            ..SfmOptions::default().absolute
        },
        ba_every: p.ba_every,
        use_priors: p.priors,
        port_refinement: if variant == PipelineVariant::RsfmRefined {
            PortRefinement::all()
        } else {
            PortRefinement::default()
        },
        ..SfmOptions::default()
    };
    let order: Vec<usize> = (0..scene.poses.len()).collect();
    let start = Instant::now();
    let result = run_incremental(&mut state, &order, &options);
    let runtime_s = start.elapsed().as_secs_f64();
    if let Err(e) = result {
        return fail(e.to_string());
    }
    let metrics = match align_and_score(&state, &scene.poses, &scene.points, AlignMode::Similarity) {
        Ok(m) => m,
        Err(e) => return fail(e.to_string()),
    };
    PipelineRecord {
        row: ResultRow {
            experiment: "pipeline",
            variant: variant.name(),
            port: label.to_string(),
            sigma_px: p.sigma_px,
            outlier_frac: p.outlier_fraction,
            trial,
            rot_err_deg: metrics.rot_err_deg,
            trans_err: metrics.pos_err_mm,
            metric2: metrics.model_err_mm,
            inlier_ratio: metrics.inlier_ratio,
            status: "ok".into(),
        },
        rms_px: metrics.rms_px,
        registered_views: state.registered_views().len(),
        points: state.num_triangulated(),
        runtime_s,
        truth: *truth,
        estimated: Some(state.cameras[0]),
        state: (trial == p.export_trial).then_some(state),
    }
}

pub fn run_pipeline_experiment(cfg: &ExperimentConfig) -> Result<Vec<PipelineRecord>, ExperimentError> {
    let models = cfg.models()?;
    let params = survey_params(cfg);
    let p = &cfg.pipeline;
    let mut jobs = Vec::new();
    for trial in 0..cfg.trials {
        for c in 0..models.len() {
            for &v in &p.variants {
                jobs.push((trial, c, v));
            }
        }
    }
    Ok(jobs
        .into_par_iter()
        .map(|(trial, c, variant)| {
            let (label, truth) = &models[c];
            match generate_survey(truth, &params, derive_seed(cfg.seed, &[SCENE, trial as u64])) {
                Ok(scene) => {
                    let noisy = corrupt_survey(
                        &scene,
                        truth,
                        p.sigma_px,
                        p.outlier_fraction,
                        derive_seed(cfg.seed, &[NOISE, trial as u64]),
                    );
                    run_pipeline_variant(cfg, label, truth, &noisy, variant, trial)
                }
                Err(e) => PipelineRecord {
                    row: failed_row("pipeline", variant.name(), label, p.sigma_px, p.outlier_fraction, trial, e.to_string()),
                    rms_px: f64::NAN,
                    registered_views: 0,
                    points: 0,
                    runtime_s: 0.0,
                    truth: *truth,
                    estimated: None,
                    state: None,
                },
            }
        })
        .collect())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate()?;
    Ok(match cfg.experiment {
        ExperimentKind::AbsPose => ExperimentOutput {
            rows: run_abs_pose_experiment(cfg)?,
            pipeline: Vec::new(),
        },
        ExperimentKind::RelPose => ExperimentOutput {
            rows: run_rel_pose_experiment(cfg)?,
            pipeline: Vec::new(),
        },
        ExperimentKind::Pipeline => {
            let pipeline = run_pipeline_experiment(cfg)?;
            ExperimentOutput {
                rows: pipeline.iter().map(|r| r.row.clone()).collect(),
                pipeline,
            }
        }
    })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// One line of `summary.csv`: statistics over the successful trials of a
/// (experiment, variant, port, sigma) group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: &'static str,
    pub variant: &'static str,
    pub port: String,
    pub sigma_px: f64,
    pub trials: usize,
    pub failures: usize,
    pub rot_err_deg_median: f64,
    pub rot_err_deg_mean: f64,
    pub trans_err_median: f64,
    pub trans_err_mean: f64,
    pub metric2_median: f64,
    pub metric2_mean: f64,
    pub inlier_ratio_median: f64,
    pub inlier_ratio_mean: f64,
}

fn order_key(r: &ResultRow) -> (String, String, u64) {
    (r.variant.to_string(), r.port.clone(), r.sigma_px.to_bits())
}

/// Groups rows in order of first appearance.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String, u64)> = Vec::new();
    let mut groups: BTreeMap<(String, String, u64), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let key = order_key(r);
        let group = groups.entry(key.clone()).or_default();
        if group.is_empty() {
            order.push(key);
        }
        group.push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let ok: Vec<&&ResultRow> = g.iter().filter(|r| r.ok()).collect();
            let col = |f: fn(&ResultRow) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (rot, trans, m2, inl) = (
                col(|r| r.rot_err_deg),
                col(|r| r.trans_err),
                col(|r| r.metric2),
                col(|r| r.inlier_ratio),
            );
            SummaryRow {
                experiment: g[0].experiment,
                variant: g[0].variant,
                port: g[0].port.clone(),
                sigma_px: g[0].sigma_px,
                trials: g.len(),
                failures: g.len() - ok.len(),
                rot_err_deg_median: median(&rot),
                rot_err_deg_mean: mean(&rot),
                trans_err_median: median(&trans),
                trans_err_mean: mean(&trans),
                metric2_median: median(&m2),
                metric2_mean: mean(&m2),
                inlier_ratio_median: median(&inl),
                inlier_ratio_mean: mean(&inl),
            }
        })
        .collect()
}
