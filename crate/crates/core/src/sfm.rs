//! Incremental refractive structure from motion over correspondence tracks.

use std::io::{self, Write};

use log::{debug, info};
use nalgebra::DVector;
use thiserror::Error;

use crate::alignment::{align_points, Similarity};
use crate::camera::{ApproxFitOptions, Pixel, Port, RefractiveCameraModel};
use crate::estimation::{
    estimate_absolute_pose_refractive, virtual_reprojection_error, EstimationError, PixelPointCorrespondence,
    RefractiveRelativePose, RelativePoseOptions,
};
use crate::geometry::{SE3Pose, Vec3};
use crate::numerics;
use crate::optim::manifold::{mat3_from_slice, mat3_to_vec};
use crate::optim::{
    bundle_adjust, refine_relative_pose_virtual_epipolar, BundleData, BundleObservation,
    BundleOptions, BundleReport, FnCost, LMOptions, Manifold, OptimError, PortRefinement, PositionPrior, Problem,
    RelativeRefineOptions, RobustLoss, ScaleGauge,
};
use crate::ransac::RansacOptions;
use crate::solvers::{triangulate_dlt, SolverError, TriangulationObservation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SfmError {
    #[error("initialization failed: {0}")]
    InitializationFailed(String),
    #[error("registration of view {view} failed: {reason}")]
    RegistrationFailed { view: usize, reason: String },
    #[error("not enough registered views with ground truth to align")]
    InsufficientOverlap,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Optimization(#[from] OptimError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: usize,
    pub observations: Vec<(usize, Pixel)>,
    pub point: Option<Vec3>,
    pub ground_truth: Option<Vec3>,
}

impl Track {
    pub fn new(id: usize, observations: Vec<(usize, Pixel)>) -> Self {
        Self {
            id,
            observations,
            point: None,
            ground_truth: None,
        }
    }

    pub fn observation_in(&self, view: usize) -> Option<Pixel> {
        self.observations.iter().find(|(v, _)| *v == view).map(|(_, p)| *p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    /// World-to-camera pose; meaningful once registered.
    pub pose: SE3Pose,
    pub registered: bool,
    pub camera: usize,
    pub prior: Option<PositionPrior>,
    /// Inlier ratio reported by the robust estimator that registered it.
    pub inlier_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionState {
    pub cameras: Vec<RefractiveCameraModel>,
    pub views: Vec<View>,
    pub tracks: Vec<Track>,
    pub anchor: Option<usize>,
    pub log: Vec<String>,
}

impl ReconstructionState {
    pub fn new(
        cameras: Vec<RefractiveCameraModel>,
        view_camera: Vec<usize>,
        tracks: Vec<Track>,
    ) -> Result<Self, SfmError> {
        if view_camera.iter().any(|&c| c >= cameras.len()) {
            return Err(SfmError::Precondition("view refers to an unknown camera".into()));
        }
        for t in &tracks {
            let mut seen: Vec<usize> = t.observations.iter().map(|(v, _)| *v).collect();
            seen.sort_unstable();
            if seen.windows(2).any(|w| w[0] == w[1]) {
                return Err(SfmError::Precondition(format!("track {} observes a view twice", t.id)));
            }
            if seen.last().is_some_and(|&v| v >= view_camera.len()) {
                return Err(SfmError::Precondition(format!("track {} refers to an unknown view", t.id)));
            }
        }
        let views = view_camera
            .into_iter()
            .map(|camera| View {
                pose: SE3Pose::identity(),
                registered: false,
                camera,
                prior: None,
                inlier_ratio: None,
            })
            .collect();
        Ok(Self {
            cameras,
            views,
            tracks,
            anchor: None,
            log: Vec::new(),
        })
    }

    pub fn model(&self, view: usize) -> &RefractiveCameraModel {
        &self.cameras[self.views[view].camera]
    }

    pub fn registered_views(&self) -> Vec<usize> {
        (0..self.views.len()).filter(|&v| self.views[v].registered).collect()
    }

    pub fn num_triangulated(&self) -> usize {
        self.tracks.iter().filter(|t| t.point.is_some()).count()
    }

    pub fn reconstructed_points(&self) -> Vec<Vec3> {
        self.tracks.iter().filter_map(|t| t.point).collect()
    }

    /// Virtual reprojection error of an observation, if it can be evaluated.
    pub fn observation_error(&self, view: usize, pixel: &Pixel, point: &Vec3) -> Option<f64> {
        virtual_reprojection_error(self.model(view), pixel, &self.views[view].pose.transform_point(point))
    }

    /// Root-mean-square virtual reprojection error over all observations of
    /// triangulated tracks in registered views.
    pub fn reprojection_rms(&self) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for t in &self.tracks {
            let Some(x) = t.point else { continue };
            for (v, p) in &t.observations {
                if !self.views[*v].registered {
                    continue;
                }
                if let Some(e) = self.observation_error(*v, p, &x) {
                    sum += e * e;
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            (sum / n as f64).sqrt()
        }
    }

    /// Maps the reconstruction through a similarity (poses, points, priors
    /// untouched).
    pub fn transform(&mut self, s: &Similarity) {
        for v in &mut self.views {
            if v.registered {
                v.pose = s.transform_pose(&v.pose);
            }
        }
        for t in &mut self.tracks {
            if let Some(x) = t.point.as_mut() {
                *x = s.apply(x);
            }
        }
    }

    /// Bundle-adjustment view of the registered views and triangulated
    /// tracks, indexed in registration-list order.
    pub fn bundle_data(&self) -> BundleData {
        assemble(self, false).data
    }

    fn note(&mut self, message: String) {
        debug!("{message}");
        self.log.push(message);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfmOptions {
    pub relative: RelativePoseOptions,
    pub approx_fit: ApproxFitOptions,
    pub relative_refine: RelativeRefineOptions,
    /// Threshold in pixels of virtual reprojection error.
    pub absolute: RansacOptions,
    pub min_triangulation_angle: f64,
    pub min_init_tracks: usize,
    pub min_registration_inliers: usize,
    /// Global bundle adjustment after this many registrations.
    pub ba_every: usize,
    /// Observations above this virtual reprojection error (pixels) are
    /// dropped after bundle adjustment.
    pub max_reprojection_px: f64,
    pub port_refinement: PortRefinement,
    pub use_priors: bool,
    pub ba_loss: RobustLoss,
    pub lm: LMOptions,
}

impl Default for SfmOptions {
    fn default() -> Self {
        Self {
            relative: RelativePoseOptions::default(),
            approx_fit: ApproxFitOptions::default(),
            relative_refine: RelativeRefineOptions::default(),
            absolute: RansacOptions {
                threshold: 12.0,
                ..RansacOptions::default()
            },
            min_triangulation_angle: numerics::MIN_TRIANGULATION_ANGLE,
            min_init_tracks: 10,
            min_registration_inliers: 10,
            ba_every: 5,
            max_reprojection_px: 4.0,
            port_refinement: PortRefinement::default(),
            use_priors: false,
            ba_loss: RobustLoss::Cauchy(1.0),
            lm: LMOptions {
                max_iterations: 200,
                function_tolerance: 1e-14,
                parameter_tolerance: 1e-12,
                ..LMOptions::default()
            },
        }
    }
}

/// Triangulates a track from its registered observations, keeping it only
/// if every observation reprojects within the threshold.
fn triangulate_track(state: &ReconstructionState, track: &Track, options: &SfmOptions) -> Option<Vec3> {
    let obs: Vec<TriangulationObservation> = track
        .observations
        .iter()
        .filter(|(v, _)| state.views[*v].registered)
        .filter_map(|(v, p)| {
            Some(TriangulationObservation {
                virtual_camera: state.model(*v).virtual_camera(p).ok()?,
                pose: state.views[*v].pose,
                pixel: *p,
            })
        })
        .collect();
    if obs.len() < 2 {
        return None;
    }
    let x = triangulate_dlt(&obs, options.min_triangulation_angle).ok()?;
    let ok = obs.iter().all(|o| {
        o.virtual_camera
            .project(&o.pose.transform_point(&x))
            .is_some_and(|p| (p - o.pixel).norm() <= options.max_reprojection_px)
    });
    ok.then_some(x)
}

/// Triangulates every untriangulated track seen by two or more registered
/// views. Returns the number of new points.
pub fn triangulate_tracks(state: &mut ReconstructionState, options: &SfmOptions) -> usize {
    let mut added = 0;
    for i in 0..state.tracks.len() {
        if state.tracks[i].point.is_some() {
            continue;
        }
        if let Some(x) = triangulate_track(state, &state.tracks[i], options) {
            state.tracks[i].point = Some(x);
            added += 1;
        }
    }
    added
}

/// Scale gauge for a reconstruction without priors. Refraction fixes the
/// metric scale, so a translation component is frozen only when some camera
/// has no port.
fn free_gauge(cameras: &[RefractiveCameraModel], poses: &[SE3Pose], anchor: usize) -> ScaleGauge {
    if cameras.iter().all(|c| c.port != Port::None) {
        return ScaleGauge::None;
    }
    frozen_gauge(poses, anchor)
}

fn frozen_gauge(poses: &[SE3Pose], anchor: usize) -> ScaleGauge {
    let (mut best, mut view, mut component) = (-1.0, usize::MAX, 0);
    for (v, p) in poses.iter().enumerate() {
        if v == anchor {
            continue;
        }
        let k = p.translation.iamax();
        if p.translation[k].abs() > best {
            best = p.translation[k].abs();
            view = v;
            component = k;
        }
    }
    if view == usize::MAX {
        ScaleGauge::None
    } else {
        ScaleGauge::FreezeTranslation { view, component }
    }
}

struct Assembly {
    data: BundleData,
    views: Vec<usize>,
    tracks: Vec<usize>,
}

fn assemble(state: &ReconstructionState, with_priors: bool) -> Assembly {
    let views = state.registered_views();
    let mut index = vec![usize::MAX; state.views.len()];
    for (i, &v) in views.iter().enumerate() {
        index[v] = i;
    }
    let mut data = BundleData {
        cameras: state.cameras.clone(),
        view_camera: views.iter().map(|&v| state.views[v].camera).collect(),
        poses: views.iter().map(|&v| state.views[v].pose).collect(),
        points: Vec::new(),
        observations: Vec::new(),
        priors: if with_priors {
            views.iter().map(|&v| state.views[v].prior).collect()
        } else {
            Vec::new()
        },
        anchor: state.anchor.map(|a| index[a]).unwrap_or(0),
    };
    let mut tracks = Vec::new();
    for (ti, t) in state.tracks.iter().enumerate() {
        let Some(x) = t.point else { continue };
        let obs: Vec<BundleObservation> = t
            .observations
            .iter()
            .filter(|(v, p)| state.views[*v].registered && state.observation_error(*v, p, &x).is_some())
            .map(|(v, p)| BundleObservation {
                view: index[*v],
                point: data.points.len(),
                pixel: *p,
            })
            .collect();
        if obs.len() < 2 {
            continue;
        }
        data.points.push(x);
        data.observations.extend(obs);
        tracks.push(ti);
    }
    Assembly { data, views, tracks }
}

fn write_back(state: &mut ReconstructionState, a: &Assembly) {
    for (i, &v) in a.views.iter().enumerate() {
        state.views[v].pose = a.data.poses[i];
    }
    for (i, &t) in a.tracks.iter().enumerate() {
        state.tracks[t].point = Some(a.data.points[i]);
    }
    state.cameras = a.data.cameras.clone();
}

/// Removes registered observations whose virtual reprojection error exceeds
/// the threshold, then re-triangulates the affected tracks. Returns the
/// number of removed observations.
pub fn filter_observations(state: &mut ReconstructionState, options: &SfmOptions) -> usize {
    let mut removed = 0;
    for i in 0..state.tracks.len() {
        let Some(x) = state.tracks[i].point else { continue };
        let before = state.tracks[i].observations.len();
        let keep: Vec<(usize, Pixel)> = state.tracks[i]
            .observations
            .iter()
            .filter(|(v, p)| {
                !state.views[*v].registered
                    || state
                        .observation_error(*v, p, &x)
                        .is_some_and(|e| e <= options.max_reprojection_px)
            })
            .copied()
            .collect();
        if keep.len() == before {
            continue;
        }
        removed += before - keep.len();
        state.tracks[i].observations = keep;
        let track = state.tracks[i].clone();
        state.tracks[i].point = triangulate_track(state, &track, options);
    }
    removed
}

/// Aligns the reconstruction to the position priors of its registered
/// views, scaling flat-port distances along when `scale_distance` is set.
/// Returns false when fewer than three priors are available.
fn align_to_priors(state: &mut ReconstructionState, scale_distance: bool) -> bool {
    let (src, dst): (Vec<Vec3>, Vec<Vec3>) = state
        .views
        .iter()
        .filter(|v| v.registered)
        .filter_map(|v| v.prior.map(|p| (v.pose.center(), p.center)))
        .unzip();
    match align_points(&src, &dst, true) {
        Some(s) if src.len() >= 3 => {
            state.transform(&s);
            if scale_distance {
                for camera in &mut state.cameras {
                    if let Port::Flat(f) = &mut camera.port {
                        f.distance *= s.scale;
                    }
                }
            }
            true
        }
        _ => false,
    }
}

/// Bundle adjustment over all registered views and triangulated tracks,
/// followed by outlier rejection.
pub fn global_bundle_adjust(
    state: &mut ReconstructionState,
    options: &SfmOptions,
    refine_port: bool,
) -> Result<BundleReport, SfmError> {
    let mut port = if refine_port { options.port_refinement } else { PortRefinement::default() };
    let priors = options.use_priors && align_to_priors(state, port.distance);
    let mut a = assemble(state, priors);
    let scale_gauge = if priors {
        ScaleGauge::PositionPriors
    } else {
        port.distance = false;
        free_gauge(&a.data.cameras, &a.data.poses, a.data.anchor)
    };
    let bundle = BundleOptions {
        refine_poses: true,
        refine_points: true,
        refine_intrinsics: false,
        port,
        loss: options.ba_loss,
        scale_gauge,
        lm: options.lm,
    };
    if bundle.port.distance {
        let staged = BundleOptions {
            port: PortRefinement {
                distance: false,
                ..bundle.port
            },
            ..bundle
        };
        bundle_adjust(&mut a.data, &staged)?;
    }
    let report = bundle_adjust(&mut a.data, &bundle)?;
    write_back(state, &a);
    let removed = filter_observations(state, options);
    state.note(format!(
        "bundle adjustment: {} views, {} points, rms {:.4} -> {:.4} px in {} iterations ({:?}), {} observations removed",
        a.views.len(),
        a.tracks.len(),
        report.initial_rms_px,
        report.final_rms_px,
        report.solve.iterations,
        report.solve.termination,
        removed
    ));
    Ok(report)
}

/// Two-view initialization from a refined refractive relative pose, followed
/// by triangulation and a two-view bundle adjustment.
pub fn initialize_from_pair(
    state: &mut ReconstructionState,
    a: usize,
    b: usize,
    options: &SfmOptions,
) -> Result<(), SfmError> {
    if a == b || a >= state.views.len() || b >= state.views.len() {
        return Err(SfmError::Precondition("initialization needs two distinct views".into()));
    }
    let pairs: Vec<(Pixel, Pixel)> = state
        .tracks
        .iter()
        .filter_map(|t| Some((t.observation_in(a)?, t.observation_in(b)?)))
        .collect();
    if pairs.len() < 5 {
        return Err(SfmError::Precondition(format!("views {a} and {b} share only {} tracks", pairs.len())));
    }
    let estimator = RefractiveRelativePose::new(state.model(a), state.model(b), &options.approx_fit)
        .map_err(|e| SfmError::InitializationFailed(e.to_string()))?;
    let estimate = estimator.estimate(&pairs, &options.relative).map_err(|e| match e {
        EstimationError::Solver(SolverError::NoParallax) => SfmError::InitializationFailed("no parallax".into()),
        e => SfmError::InitializationFailed(e.to_string()),
    })?;
    let inliers: Vec<(Pixel, Pixel)> = pairs
        .iter()
        .zip(&estimate.ransac.inlier_mask)
        .filter(|(_, m)| **m)
        .map(|(p, _)| *p)
        .collect();
    let refine = RelativeRefineOptions {
        keep_scale: false,
        ..options.relative_refine
    };
    let refined = refine_relative_pose_virtual_epipolar(state.model(a), state.model(b), &inliers, &estimate.pose, &refine)
        .map(|r| r.pose)
        .unwrap_or(estimate.pose);
    let mut pose_b = refined;
    if let (Some(pa), Some(pb)) = (state.views[a].prior, state.views[b].prior) {
        let baseline = (pb.center - pa.center).norm();
        if baseline > 0.0 {
            pose_b.translation *= baseline;
        }
    }
    state.views[a].pose = SE3Pose::identity();
    state.views[b].pose = pose_b;
    state.views[a].registered = true;
    state.views[b].registered = true;
    state.views[a].inlier_ratio = Some(estimate.ransac.inlier_ratio);
    state.views[b].inlier_ratio = Some(estimate.ransac.inlier_ratio);
    state.anchor = Some(a);
    let added = triangulate_tracks(state, options);
    if added < options.min_init_tracks {
        for v in [a, b] {
            state.views[v].registered = false;
        }
        for t in &mut state.tracks {
            t.point = None;
        }
        state.anchor = None;
        return Err(SfmError::InitializationFailed(format!("only {added} tracks triangulated")));
    }
    let mut assembly = assemble(state, false);
    let bundle = BundleOptions {
        loss: options.ba_loss,
        scale_gauge: frozen_gauge(&assembly.data.poses, assembly.data.anchor),
        lm: options.lm,
        ..BundleOptions::default()
    };
    bundle_adjust(&mut assembly.data, &bundle)?;
    write_back(state, &assembly);
    filter_observations(state, options);
    state.note(format!(
        "initialized from views {a} and {b}: {} of {} pairs inliers, {} points",
        inliers.len(),
        pairs.len(),
        state.num_triangulated()
    ));
    Ok(())
}

/// Pose-only refinement of one view on its 2D-3D matches.
fn refine_view_pose(
    model: &RefractiveCameraModel,
    corrs: &[PixelPointCorrespondence],
    pose: &SE3Pose,
    loss: RobustLoss,
    lm: &LMOptions,
) -> Result<SE3Pose, OptimError> {
    let mut problem = Problem::new();
    let rot = problem.add_block(mat3_to_vec(&pose.rotation), Manifold::Rotation);
    let tr = problem.add_block(pose.translation.iter().copied().collect(), Manifold::Euclidean);
    let model = *model;
    let cams: Vec<_> = corrs
        .iter()
        .filter_map(|c| Some((model.virtual_camera(&c.pixel).ok()?, *c)))
        .collect();
    for (vc, c) in cams {
        problem.add_residual(
            Box::new(FnCost::new(2, move |p: &[&[f64]]| {
                let r = mat3_from_slice(p[0]);
                let t = Vec3::new(p[1][0], p[1][1], p[1][2]);
                let q = vc.project(&(r * c.point + t))?;
                Some(DVector::from_vec(vec![q.x - c.pixel.x, q.y - c.pixel.y]))
            })),
            loss,
            vec![rot, tr],
        );
    }
    problem.solve(lm)?;
    let t = problem.block(tr);
    Ok(SE3Pose::new(mat3_from_slice(problem.block(rot)), Vec3::new(t[0], t[1], t[2])))
}

/// Registers a view against the triangulated tracks it observes.
pub fn register_next_view(state: &mut ReconstructionState, view: usize, options: &SfmOptions) -> Result<f64, SfmError> {
    if view >= state.views.len() || state.views[view].registered {
        return Err(SfmError::Precondition(format!("view {view} is unknown or already registered")));
    }
    let corrs: Vec<PixelPointCorrespondence> = state
        .tracks
        .iter()
        .filter_map(|t| {
            Some(PixelPointCorrespondence {
                pixel: t.observation_in(view)?,
                point: t.point?,
            })
        })
        .collect();
    if corrs.len() < 3 {
        return Err(SfmError::Precondition(format!(
            "view {view} sees only {} triangulated tracks",
            corrs.len()
        )));
    }
    let model = *state.model(view);
    let report = estimate_absolute_pose_refractive(&model, &corrs, &options.absolute).map_err(|e| {
        SfmError::RegistrationFailed {
            view,
            reason: e.to_string(),
        }
    })?;
    if report.num_inliers < options.min_registration_inliers {
        return Err(SfmError::RegistrationFailed {
            view,
            reason: format!("only {} inliers", report.num_inliers),
        });
    }
    let inliers: Vec<PixelPointCorrespondence> = corrs
        .iter()
        .zip(&report.inlier_mask)
        .filter(|(_, m)| **m)
        .map(|(c, _)| *c)
        .collect();
    let pose = refine_view_pose(&model, &inliers, &report.model, options.ba_loss, &options.lm).unwrap_or(report.model);
    state.views[view].pose = pose;
    state.views[view].registered = true;
    state.views[view].inlier_ratio = Some(report.inlier_ratio);
    state.note(format!(
        "registered view {view}: {} of {} matches inliers",
        report.num_inliers,
        corrs.len()
    ));
    Ok(report.inlier_ratio)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub registered: usize,
    pub skipped: Vec<usize>,
    pub bundle_adjustments: usize,
}

/// Initializes from the first two views of `order`, then registers the rest
/// in sequence with periodic global bundle adjustment. The last global
/// adjustment also refines the enabled port parameters; intermediate ones do
/// as well once the port refinement is enabled.
pub fn run_incremental(
    state: &mut ReconstructionState,
    order: &[usize],
    options: &SfmOptions,
) -> Result<RunSummary, SfmError> {
    if order.len() < 2 {
        return Err(SfmError::Precondition("need at least two views".into()));
    }
    initialize_from_pair(state, order[0], order[1], options)?;
    let mut summary = RunSummary {
        registered: 2,
        skipped: Vec::new(),
        bundle_adjustments: 0,
    };
    let intermediate = SfmOptions {
        port_refinement: PortRefinement {
            distance: false,
            ..options.port_refinement
        },
        use_priors: false,
        ..options.clone()
    };
    let mut since_ba = 0;
    for &v in &order[2..] {
        if let Err(e) = register_next_view(state, v, options) {
            state.note(format!("skipping view {v}: {e}"));
            summary.skipped.push(v);
            continue;
        }
        summary.registered += 1;
        since_ba += 1;
        triangulate_tracks(state, options);
        if options.ba_every > 0 && since_ba >= options.ba_every {
            global_bundle_adjust(state, &intermediate, true)?;
            triangulate_tracks(state, options);
            summary.bundle_adjustments += 1;
            since_ba = 0;
        }
    }
    global_bundle_adjust(state, options, true)?;
    triangulate_tracks(state, options);
    summary.bundle_adjustments += 1;
    info!(
        "reconstruction: {} views registered, {} points",
        summary.registered,
        state.num_triangulated()
    );
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    Rigid,
    Similarity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    /// Root-mean-square virtual reprojection error (pixels).
    pub rms_px: f64,
    /// Mean rotation error (degrees).
    pub rot_err_deg: f64,
    /// Mean camera-center error (millimeters).
    pub pos_err_mm: f64,
    /// Mean distance of reconstructed points to the nearest ground-truth
    /// point (millimeters).
    pub model_err_mm: f64,
    pub inlier_ratio: f64,
    pub runtime_s: f64,
}

/// Aligns the registered camera centers to ground truth and scores the
/// reconstruction. Ground truth is in meters.
pub fn align_and_score(
    state: &ReconstructionState,
    gt_poses: &[SE3Pose],
    gt_points: &[Vec3],
    mode: AlignMode,
) -> Result<MetricsRow, SfmError> {
    let views: Vec<usize> = state.registered_views().into_iter().filter(|&v| v < gt_poses.len()).collect();
    if views.len() < 3 {
        return Err(SfmError::InsufficientOverlap);
    }
    let src: Vec<Vec3> = views.iter().map(|&v| state.views[v].pose.center()).collect();
    let dst: Vec<Vec3> = views.iter().map(|&v| gt_poses[v].center()).collect();
    let s = align_points(&src, &dst, mode == AlignMode::Similarity).ok_or(SfmError::InsufficientOverlap)?;
    let n = views.len() as f64;
    let mut rot = 0.0;
    let mut pos = 0.0;
    for &v in &views {
        let aligned = s.transform_pose(&state.views[v].pose);
        rot += aligned.rotation_angle_to(&gt_poses[v]).to_degrees();
        pos += (aligned.center() - gt_poses[v].center()).norm();
    }
    let points = state.reconstructed_points();
    let model_err = if points.is_empty() || gt_points.is_empty() {
        f64::NAN
    } else {
        points
            .iter()
            .map(|x| {
                let y = s.apply(x);
                gt_points.iter().map(|g| (g - y).norm_squared()).fold(f64::INFINITY, f64::min).sqrt()
            })
            .sum::<f64>()
            / points.len() as f64
    };
    let ratios: Vec<f64> = state.views.iter().filter_map(|v| v.inlier_ratio).collect();
    Ok(MetricsRow {
        rms_px: state.reprojection_rms(),
        rot_err_deg: rot / n,
        pos_err_mm: 1000.0 * pos / n,
        model_err_mm: 1000.0 * model_err,
        inlier_ratio: if ratios.is_empty() { 0.0 } else { ratios.iter().sum::<f64>() / ratios.len() as f64 },
        runtime_s: 0.0,
    })
}

/// ASCII PLY with one `x y z` vertex per point.
pub fn write_ply<W: Write>(mut w: W, points: &[Vec3]) -> io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    writeln!(w, "end_header")?;
    for p in points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

/// One line per registered view: `view_id qw qx qy qz tx ty tz`
/// (world-to-camera).
pub fn write_poses<W: Write>(mut w: W, state: &ReconstructionState) -> io::Result<()> {
    for v in state.registered_views() {
        let pose = &state.views[v].pose;
        let q = pose.quaternion();
        let t = pose.translation;
        writeln!(w, "{v} {} {} {} {} {} {} {}", q.w, q.i, q.j, q.k, t.x, t.y, t.z)?;
    }
    Ok(())
}
