//! Bundle adjustment on the virtual reprojection error, with optional
//! refinement of the port parameters.

use nalgebra::{DMatrix, DVector, Matrix2x3, Unit};

use super::manifold::{mat3_from_slice, mat3_to_vec};
use super::{CostFunction, FnCost, LMOptions, Manifold, OptimError, Problem, RobustLoss, SolveReport};
use crate::camera::{Pixel, Port, RefractiveCameraModel, VirtualCamera};
use crate::geometry::{SE3Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleObservation {
    pub view: usize,
    pub point: usize,
    pub pixel: Pixel,
}

/// Soft constraint `weight * (C - center)` on a camera center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionPrior {
    pub center: Vec3,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleData {
    pub cameras: Vec<RefractiveCameraModel>,
    /// Camera index of every view.
    pub view_camera: Vec<usize>,
    /// World-to-camera poses.
    pub poses: Vec<SE3Pose>,
    pub points: Vec<Vec3>,
    pub observations: Vec<BundleObservation>,
    /// Per-view priors; an empty vector means none.
    pub priors: Vec<Option<PositionPrior>>,
    /// View whose pose is held constant.
    pub anchor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleGauge {
    None,
    /// Hold one translation component of a non-anchor view constant.
    FreezeTranslation { view: usize, component: usize },
    /// Scale is fixed by the position priors.
    PositionPriors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PortRefinement {
    pub normal: bool,
    pub distance: bool,
    pub decentering: bool,
}

impl PortRefinement {
    pub fn all() -> Self {
        Self {
            normal: true,
            distance: true,
            decentering: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleOptions {
    pub refine_poses: bool,
    pub refine_points: bool,
    /// Refines fx, fy, cx, cy.
    pub refine_intrinsics: bool,
    pub port: PortRefinement,
    pub loss: RobustLoss,
    pub scale_gauge: ScaleGauge,
    pub lm: LMOptions,
}

impl Default for BundleOptions {
    fn default() -> Self {
        Self {
            refine_poses: true,
            refine_points: true,
            refine_intrinsics: false,
            port: PortRefinement::default(),
            loss: RobustLoss::Cauchy(1.0),
            scale_gauge: ScaleGauge::None,
            lm: LMOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleReport {
    pub solve: SolveReport,
    pub initial_rms_px: f64,
    pub final_rms_px: f64,
}

/// Block handles of a bundle problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleBlocks {
    pub rotations: Vec<usize>,
    pub translations: Vec<usize>,
    pub points: Vec<usize>,
    pub intrinsics: Vec<usize>,
    /// Flat: `[normal, distance]`; dome: `[center]`; pinhole: empty.
    pub ports: Vec<Vec<usize>>,
}

fn intrinsics_values(model: &RefractiveCameraModel) -> Vec<f64> {
    let k = &model.intrinsics;
    vec![k.fx, k.fy, k.cx, k.cy]
}

fn port_values(model: &RefractiveCameraModel) -> Vec<(Vec<f64>, Manifold)> {
    match model.port {
        Port::None => Vec::new(),
        Port::Flat(f) => vec![
            (f.normal.iter().copied().collect(), Manifold::UnitSphere),
            (vec![f.distance], Manifold::Euclidean),
        ],
        Port::Dome(d) => vec![(d.center.iter().copied().collect(), Manifold::Euclidean)],
    }
}

/// Camera model with intrinsics and port parameters replaced by block values.
/// `None` when the values leave the model's valid domain.
pub fn model_from_blocks(base: &RefractiveCameraModel, intr: &[f64], port: &[&[f64]]) -> Option<RefractiveCameraModel> {
    let mut m = *base;
    m.intrinsics.fx = intr[0];
    m.intrinsics.fy = intr[1];
    m.intrinsics.cx = intr[2];
    m.intrinsics.cy = intr[3];
    match &mut m.port {
        Port::None => {}
        Port::Flat(f) => {
            f.normal = Unit::new_normalize(Vec3::new(port[0][0], port[0][1], port[0][2]));
            f.distance = port[1][0];
        }
        Port::Dome(d) => d.center = Vec3::new(port[0][0], port[0][1], port[0][2]),
    }
    m.validate().ok()?;
    Some(m)
}

struct ObservationCost {
    base: RefractiveCameraModel,
    pixel: Pixel,
    /// Virtual camera of the pixel when the camera blocks are constant.
    fixed: Option<VirtualCamera>,
}

impl ObservationCost {
    /// Residual and its derivative with respect to the camera-frame point.
    fn evaluate(&self, params: &[&[f64]]) -> Option<(DVector<f64>, Matrix2x3<f64>, Vec3)> {
        let r = mat3_from_slice(params[0]);
        let t = Vec3::new(params[1][0], params[1][1], params[1][2]);
        let x = Vec3::new(params[2][0], params[2][1], params[2][2]);
        let vc = match self.fixed {
            Some(vc) => vc,
            None => model_from_blocks(&self.base, params[3], &params[4..])?
                .virtual_camera(&self.pixel)
                .ok()?,
        };
        let q = r * x + t - vc.center;
        if !(q.z > 0.0) {
            return None;
        }
        let res = DVector::from_vec(vec![
            vc.focal * q.x / q.z + vc.principal_point.x - self.pixel.x,
            vc.focal * q.y / q.z + vc.principal_point.y - self.pixel.y,
        ]);
        let iz = 1.0 / q.z;
        let d = Matrix2x3::new(iz, 0.0, -q.x * iz * iz, 0.0, iz, -q.y * iz * iz) * vc.focal;
        Some((res, d, x))
    }
}

impl CostFunction for ObservationCost {
    fn num_residuals(&self) -> usize {
        2
    }

    fn residuals(&self, params: &[&[f64]]) -> Option<DVector<f64>> {
        self.evaluate(params).map(|(r, _, _)| r)
    }

    fn jacobians(&self, params: &[&[f64]]) -> Option<Vec<Option<DMatrix<f64>>>> {
        self.residuals_and_jacobians(params)?.1
    }

    fn residuals_and_jacobians(
        &self,
        params: &[&[f64]],
    ) -> Option<(DVector<f64>, Option<Vec<Option<DMatrix<f64>>>>)> {
        let (res, d, x) = self.evaluate(params)?;
        let r = mat3_from_slice(params[0]);
        let mut jr = DMatrix::zeros(2, 9);
        for i in 0..3 {
            for j in 0..3 {
                for row in 0..2 {
                    jr[(row, i * 3 + j)] = d[(row, i)] * x[j];
                }
            }
        }
        let jt = DMatrix::from_fn(2, 3, |i, j| d[(i, j)]);
        let dp = d * r;
        let jp = DMatrix::from_fn(2, 3, |i, j| dp[(i, j)]);
        let mut out = vec![Some(jr), Some(jt), Some(jp)];
        out.extend((3..params.len()).map(|_| None));
        Some((res, Some(out)))
    }
}

fn validate(data: &BundleData, options: &BundleOptions) -> Result<(), OptimError> {
    let invalid = |m: &str| Err(OptimError::InvalidProblem(m.to_string()));
    let nv = data.poses.len();
    if data.view_camera.len() != nv || data.view_camera.iter().any(|&c| c >= data.cameras.len()) {
        return invalid("every view needs a valid camera index");
    }
    if data.anchor >= nv {
        return invalid("anchor view out of range");
    }
    if !data.priors.is_empty() && data.priors.len() != nv {
        return invalid("priors must be empty or given per view");
    }
    if data
        .observations
        .iter()
        .any(|o| o.view >= nv || o.point >= data.points.len())
    {
        return invalid("observation references an unknown view or point");
    }
    let free_distance = options.refine_poses
        && options.port.distance
        && data.cameras.iter().any(|c| matches!(c.port, Port::Flat(_)));
    match options.scale_gauge {
        ScaleGauge::None if free_distance => return Err(OptimError::GaugeUnderconstrained),
        ScaleGauge::FreezeTranslation { view, component } => {
            if view >= nv || view == data.anchor || component > 2 {
                return invalid("scale gauge must freeze a component of a non-anchor view");
            }
        }
        ScaleGauge::PositionPriors => {
            if data.priors.iter().flatten().count() < 2 {
                return Err(OptimError::GaugeUnderconstrained);
            }
        }
        _ => {}
    }
    Ok(())
}

/// Builds the bundle problem without solving it.
pub fn bundle_problem(data: &BundleData, options: &BundleOptions) -> Result<(Problem, BundleBlocks), OptimError> {
    validate(data, options)?;
    let mut problem = Problem::new();
    let mut blocks = BundleBlocks {
        rotations: Vec::new(),
        translations: Vec::new(),
        points: Vec::new(),
        intrinsics: Vec::new(),
        ports: Vec::new(),
    };
    for (v, pose) in data.poses.iter().enumerate() {
        let r = problem.add_block(mat3_to_vec(&pose.rotation), Manifold::Rotation);
        let t = problem.add_block(pose.translation.iter().copied().collect(), Manifold::Euclidean);
        if !options.refine_poses || v == data.anchor {
            problem.set_constant(r, true);
            problem.set_constant(t, true);
        }
        blocks.rotations.push(r);
        blocks.translations.push(t);
    }
    if let ScaleGauge::FreezeTranslation { view, component } = options.scale_gauge {
        problem.set_constant_indices(blocks.translations[view], vec![component]);
    }
    for p in &data.points {
        let b = problem.add_block(p.iter().copied().collect(), Manifold::Euclidean);
        problem.set_eliminate(b, true);
        problem.set_constant(b, !options.refine_points);
        blocks.points.push(b);
    }
    let mut fixed_camera = Vec::with_capacity(data.cameras.len());
    for cam in &data.cameras {
        let k = problem.add_block(intrinsics_values(cam), Manifold::Euclidean);
        problem.set_constant(k, !options.refine_intrinsics);
        blocks.intrinsics.push(k);
        let mut ports = Vec::new();
        let flags: Vec<bool> = match cam.port {
            Port::None => Vec::new(),
            Port::Flat(_) => vec![options.port.normal, options.port.distance],
            Port::Dome(_) => vec![options.port.decentering],
        };
        let flags_any = flags.iter().any(|&f| f);
        for ((values, manifold), free) in port_values(cam).into_iter().zip(flags) {
            let b = problem.add_block(values, manifold);
            problem.set_constant(b, !free);
            ports.push(b);
        }
        blocks.ports.push(ports);
        fixed_camera.push(!options.refine_intrinsics && !flags_any);
    }
    for obs in &data.observations {
        let cam = data.view_camera[obs.view];
        let mut ids = vec![
            blocks.rotations[obs.view],
            blocks.translations[obs.view],
            blocks.points[obs.point],
            blocks.intrinsics[cam],
        ];
        ids.extend(&blocks.ports[cam]);
        problem.add_residual(
            Box::new(ObservationCost {
                base: data.cameras[cam],
                pixel: obs.pixel,
                fixed: if fixed_camera[cam] {
                    Some(
                        data.cameras[cam]
                            .virtual_camera(&obs.pixel)
                            .map_err(|e| OptimError::InvalidProblem(e.to_string()))?,
                    )
                } else {
                    None
                },
            }),
            options.loss,
            ids,
        );
    }
    if options.scale_gauge == ScaleGauge::PositionPriors {
        for (v, prior) in data.priors.iter().enumerate() {
            let Some(prior) = *prior else { continue };
            problem.add_residual(
                Box::new(FnCost::new(3, move |p: &[&[f64]]| {
                    let r = mat3_from_slice(p[0]);
                    let t = Vec3::new(p[1][0], p[1][1], p[1][2]);
                    let c = -(r.transpose() * t);
                    Some(DVector::from_iterator(3, ((c - prior.center) * prior.weight).iter().copied()))
                })),
                RobustLoss::Trivial,
                vec![blocks.rotations[v], blocks.translations[v]],
            );
        }
    }
    Ok((problem, blocks))
}

/// Root-mean-square virtual reprojection error over all observations that
/// have a valid projection.
pub fn reprojection_rms(data: &BundleData) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for e in observation_errors(data).into_iter().flatten() {
        sum += e * e;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Virtual reprojection error of every observation, in pixels.
pub fn observation_errors(data: &BundleData) -> Vec<Option<f64>> {
    data.observations
        .iter()
        .map(|o| {
            let model = &data.cameras[data.view_camera[o.view]];
            let vc = model.virtual_camera(&o.pixel).ok()?;
            let p = vc.project(&data.poses[o.view].transform_point(&data.points[o.point]))?;
            Some((p - o.pixel).norm())
        })
        .collect()
}

/// Minimizes the robustified virtual reprojection error and writes the
/// optimized values back into `data`.
pub fn bundle_adjust(data: &mut BundleData, options: &BundleOptions) -> Result<BundleReport, OptimError> {
    let initial_rms_px = reprojection_rms(data);
    let (mut problem, blocks) = bundle_problem(data, options)?;
    let solve = problem.solve(&options.lm)?;
    for v in 0..data.poses.len() {
        let t = problem.block(blocks.translations[v]);
        data.poses[v] = SE3Pose::new(
            mat3_from_slice(problem.block(blocks.rotations[v])),
            Vec3::new(t[0], t[1], t[2]),
        );
    }
    for (p, &b) in data.points.iter_mut().zip(&blocks.points) {
        let v = problem.block(b);
        *p = Vec3::new(v[0], v[1], v[2]);
    }
    for (c, cam) in data.cameras.iter_mut().enumerate() {
        let port: Vec<&[f64]> = blocks.ports[c].iter().map(|&b| problem.block(b)).collect();
        if let Some(m) = model_from_blocks(cam, problem.block(blocks.intrinsics[c]), &port) {
            *cam = m;
        }
    }
    Ok(BundleReport {
        solve,
        initial_rms_px,
        final_rms_px: reprojection_rms(data),
    })
}
