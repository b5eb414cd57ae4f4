//! Experiment configuration: TOML format with defaults and validation.

use std::path::Path;

use rsfm_core::camera::{
    DomePortParams, FlatPortParams, MediaIndices, PinholeIntrinsics, Port, RefractiveCameraModel,
};
use rsfm_core::geometry::Vec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("key `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    AbsPose,
    RelPose,
    Pipeline,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::AbsPose => "abs_pose",
            ExperimentKind::RelPose => "rel_pose",
            ExperimentKind::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraType {
    Pinhole,
    Flat,
    Dome,
}

fn default_n_air() -> f64 {
    MediaIndices::default().air
}
fn default_n_glass() -> f64 {
    MediaIndices::default().glass
}
fn default_n_water() -> f64 {
    MediaIndices::default().water
}

/// One `[[cameras]]` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    #[serde(rename = "type")]
    pub kind: CameraType,
    /// Label used in the `port` column; defaults to the camera type.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thickness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default = "default_n_air")]
    pub n_air: f64,
    #[serde(default = "default_n_glass")]
    pub n_glass: f64,
    #[serde(default = "default_n_water")]
    pub n_water: f64,
}

/// Horizontal field of view and image size of the simulated camera.
pub const FOV_DEG: f64 = 73.0;
pub const WIDTH: u32 = 1920;
pub const HEIGHT: u32 = 1280;
pub const FLAT_THICKNESS: f64 = 0.01;
pub const DOME_RADIUS: f64 = 0.05;
pub const DOME_THICKNESS: f64 = 0.007;
pub const TILTED_NORMAL: [f64; 3] = [0.166, 0.148, 0.975];

impl CameraSpec {
    fn base(kind: CameraType, name: &str) -> Self {
        let k = PinholeIntrinsics::from_horizontal_fov(FOV_DEG, WIDTH, HEIGHT).expect("valid default intrinsics");
        let m = MediaIndices::default();
        Self {
            kind,
            name: Some(name.to_string()),
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: WIDTH,
            height: HEIGHT,
            k1: 0.0,
            k2: 0.0,
            normal: None,
            dist: None,
            thickness: None,
            center: None,
            radius: None,
            n_air: m.air,
            n_glass: m.glass,
            n_water: m.water,
        }
    }

    pub fn pinhole(name: &str) -> Self {
        Self::base(CameraType::Pinhole, name)
    }

    pub fn flat(name: &str, normal: [f64; 3], dist: f64) -> Self {
        Self {
            normal: Some(normal),
            dist: Some(dist),
            thickness: Some(FLAT_THICKNESS),
            ..Self::base(CameraType::Flat, name)
        }
    }

    pub fn dome(name: &str, center: [f64; 3]) -> Self {
        Self {
            center: Some(center),
            radius: Some(DOME_RADIUS),
            thickness: Some(DOME_THICKNESS),
            ..Self::base(CameraType::Dome, name)
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            match self.kind {
                CameraType::Pinhole => "pinhole",
                CameraType::Flat => "flat",
                CameraType::Dome => "dome",
            }
            .to_string()
        })
    }

    /// Builds the camera model; `key` prefixes error messages.
    pub fn to_model(&self, key: &str) -> Result<RefractiveCameraModel, ConfigError> {
        let required = |v: Option<f64>, name: &str| v.ok_or_else(|| invalid(format!("{key}.{name}"), "missing"));
        let required3 =
            |v: Option<[f64; 3]>, name: &str| v.ok_or_else(|| invalid(format!("{key}.{name}"), "missing"));
        let intrinsics = PinholeIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            .map_err(|e| invalid(format!("{key}.fx"), e.to_string()))?
            .with_distortion(self.k1, self.k2);
        let indices = MediaIndices {
            air: self.n_air,
            glass: self.n_glass,
            water: self.n_water,
        };
        let port = match self.kind {
            CameraType::Pinhole => Port::None,
            CameraType::Flat => {
                let n = required3(self.normal, "normal")?;
                let mut p = FlatPortParams::new(
                    Vec3::from(n),
                    required(self.dist, "dist")?,
                    required(self.thickness, "thickness")?,
                )
                .map_err(|e| invalid(format!("{key}.normal"), e.to_string()))?;
                p.indices = indices;
                Port::Flat(p)
            }
            CameraType::Dome => {
                let c = required3(self.center, "center")?;
                let mut p = DomePortParams::new(
                    Vec3::from(c),
                    required(self.radius, "radius")?,
                    required(self.thickness, "thickness")?,
                )
                .map_err(|e| invalid(format!("{key}.center"), e.to_string()))?;
                p.indices = indices;
                Port::Dome(p)
            }
        };
        RefractiveCameraModel::new(intrinsics, port).map_err(|e| invalid(format!("{key}.n_water"), e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineVariant {
    /// Pinhole with distortion fitted to the refractive camera.
    Uwpinhole,
    /// Refractive pipeline with the true port parameters.
    RsfmGt,
    /// Refractive pipeline from perturbed port parameters with refinement.
    RsfmRefined,
}

impl PipelineVariant {
    pub fn name(&self) -> &'static str {
        match self {
            PipelineVariant::Uwpinhole => "uwpinhole",
            PipelineVariant::RsfmGt => "rsfm_gt",
            PipelineVariant::RsfmRefined => "rsfm_refined",
        }
    }
}

fn d_views() -> usize {
    20
}
fn d_pipeline_points() -> usize {
    800
}
fn d_pipeline_sigma() -> f64 {
    0.5
}
fn d_row_length() -> usize {
    10
}
fn d_spacing() -> f64 {
    0.3
}
fn d_row_spacing() -> f64 {
    0.6
}
fn d_floor() -> [f64; 2] {
    [2.0, 3.0]
}
fn d_ba_every() -> usize {
    5
}
fn d_prior_weight() -> f64 {
    1000.0
}
fn d_fit_depth() -> f64 {
    2.5
}
fn d_init_normal() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}
fn d_init_center() -> [f64; 3] {
    [0.0, 0.0, 0.0]
}
fn d_dist_factor() -> f64 {
    1.5
}
fn d_variants() -> Vec<PipelineVariant> {
    vec![PipelineVariant::Uwpinhole, PipelineVariant::RsfmGt, PipelineVariant::RsfmRefined]
}

/// `[pipeline]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "d_views")]
    pub views: usize,
    #[serde(default = "d_pipeline_points")]
    pub points: usize,
    #[serde(default = "d_pipeline_sigma")]
    pub sigma_px: f64,
    #[serde(default)]
    pub outlier_fraction: f64,
    /// Views per lawn-mower row.
    #[serde(default = "d_row_length")]
    pub row_length: usize,
    /// Along-track camera spacing (m).
    #[serde(default = "d_spacing")]
    pub spacing: f64,
    /// Cross-track row spacing (m).
    #[serde(default = "d_row_spacing")]
    pub row_spacing: f64,
    /// Depth range of the observed surface below the cameras (m).
    #[serde(default = "d_floor")]
    pub floor_depth: [f64; 2],
    #[serde(default = "d_ba_every")]
    pub ba_every: usize,
    #[serde(default)]
    pub priors: bool,
    /// Standard deviation of the position-prior noise (m).
    #[serde(default)]
    pub prior_sigma_m: f64,
    #[serde(default = "d_prior_weight")]
    pub prior_weight: f64,
    /// Working distance at which the pinhole approximation is fitted (m).
    #[serde(default = "d_fit_depth")]
    pub uw_fit_depth: f64,
    #[serde(default = "d_init_normal")]
    pub init_normal: [f64; 3],
    #[serde(default = "d_init_center")]
    pub init_center: [f64; 3],
    /// Initial interface distance as a multiple of the truth; applied only
    /// when priors make the distance observable.
    #[serde(default = "d_dist_factor")]
    pub init_dist_factor: f64,
    #[serde(default = "d_variants")]
    pub variants: Vec<PipelineVariant>,
    /// Write PLY and pose exports for this trial.
    #[serde(default)]
    pub export_trial: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

fn d_seed() -> u64 {
    1
}
fn d_trials() -> usize {
    200
}
fn d_points() -> usize {
    200
}
fn d_outliers() -> f64 {
    0.3
}
fn d_sigmas() -> Vec<f64> {
    (0..=8).map(|i| 0.25 * i as f64).collect()
}
fn d_depth() -> [f64; 2] {
    [1.0, 10.0]
}
fn d_cube() -> f64 {
    2.0
}
fn d_roll() -> f64 {
    15.0
}
fn d_abs_threshold() -> f64 {
    12.0
}
fn d_rel_threshold() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default = "d_points")]
    pub points: usize,
    #[serde(default = "d_outliers")]
    pub outlier_fraction: f64,
    #[serde(default = "d_sigmas")]
    pub sigmas: Vec<f64>,
    /// Camera-frame depth range of scene points (m).
    #[serde(default = "d_depth")]
    pub depth_range: [f64; 2],
    /// Edge length of the cube camera centers are drawn from (m).
    #[serde(default = "d_cube")]
    pub pose_cube: f64,
    #[serde(default = "d_roll")]
    pub max_roll_deg: f64,
    /// Absolute-pose RANSAC threshold on the virtual reprojection error.
    #[serde(default = "d_abs_threshold")]
    pub abs_threshold_px: f64,
    /// Relative-pose RANSAC threshold, converted to normalized units with
    /// the focal length of the camera the residual is measured in.
    #[serde(default = "d_rel_threshold")]
    pub rel_threshold_px: f64,
    pub cameras: Vec<CameraSpec>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

impl ExperimentConfig {
    /// Built-in configuration used when no file is given.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let cameras = match kind {
            ExperimentKind::AbsPose => vec![
                CameraSpec::flat("flat", [0.0, 0.0, 1.0], 0.01),
                CameraSpec::dome("dome", [0.0, 0.0, 0.003]),
                CameraSpec::dome("dome_centered", [0.0, 0.0, 0.0]),
            ],
            ExperimentKind::RelPose => vec![
                CameraSpec::flat("flat", [0.0, 0.0, 1.0], 0.01),
                CameraSpec::dome("dome", [0.0, 0.0, 0.003]),
                CameraSpec::dome("dome_centered", [0.0, 0.0, 0.0]),
            ],
            ExperimentKind::Pipeline => vec![CameraSpec::flat("flat_tilted", TILTED_NORMAL, 0.02)],
        };
        let mut cfg = Self {
            experiment: kind,
            seed: d_seed(),
            trials: d_trials(),
            points: d_points(),
            outlier_fraction: d_outliers(),
            sigmas: d_sigmas(),
            depth_range: d_depth(),
            pose_cube: d_cube(),
            max_roll_deg: d_roll(),
            abs_threshold_px: d_abs_threshold(),
            rel_threshold_px: d_rel_threshold(),
            cameras,
            pipeline: PipelineConfig::default(),
        };
        if kind == ExperimentKind::Pipeline {
            cfg.trials = 1;
        }
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn models(&self) -> Result<Vec<(String, RefractiveCameraModel)>, ConfigError> {
        self.cameras
            .iter()
            .enumerate()
            .map(|(i, c)| Ok((c.label(), c.to_model(&format!("cameras[{i}]"))?)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fraction = |v: f64, key: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(key, "must lie in [0, 1]"))
            }
        };
        fraction(self.outlier_fraction, "outlier_fraction")?;
        fraction(self.pipeline.outlier_fraction, "pipeline.outlier_fraction")?;
        if self.trials < 1 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if self.points < 5 {
            return Err(invalid("points", "must be at least 5"));
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(invalid("sigmas", "needs at least one finite value >= 0"));
        }
        let [d0, d1] = self.depth_range;
        if !(d0 > 0.0 && d1 > d0 && d1.is_finite()) {
            return Err(invalid("depth_range", "needs 0 < min < max"));
        }
        if !(self.pose_cube >= 0.0 && self.pose_cube.is_finite()) {
            return Err(invalid("pose_cube", "must be >= 0"));
        }
        if !(self.max_roll_deg >= 0.0 && self.max_roll_deg <= 180.0) {
            return Err(invalid("max_roll_deg", "must lie in [0, 180]"));
        }
        if !(self.abs_threshold_px > 0.0) {
            return Err(invalid("abs_threshold_px", "must be positive"));
        }
        if !(self.rel_threshold_px > 0.0) {
            return Err(invalid("rel_threshold_px", "must be positive"));
        }
        if self.cameras.is_empty() {
            return Err(invalid("cameras", "at least one camera is required"));
        }
        self.models()?;
        let p = &self.pipeline;
        if p.views < 3 {
            return Err(invalid("pipeline.views", "must be at least 3"));
        }
        if p.row_length < 2 {
            return Err(invalid("pipeline.row_length", "must be at least 2"));
        }
        if p.points < 10 {
            return Err(invalid("pipeline.points", "must be at least 10"));
        }
        if !(p.sigma_px >= 0.0) {
            return Err(invalid("pipeline.sigma_px", "must be >= 0"));
        }
        let [f0, f1] = p.floor_depth;
        if !(f0 > 0.0 && f1 >= f0) {
            return Err(invalid("pipeline.floor_depth", "needs 0 < min <= max"));
        }
        if !(p.prior_sigma_m >= 0.0) {
            return Err(invalid("pipeline.prior_sigma_m", "must be >= 0"));
        }
        if !(p.prior_weight > 0.0) {
            return Err(invalid("pipeline.prior_weight", "must be positive"));
        }
        if !(p.init_dist_factor > 0.0) {
            return Err(invalid("pipeline.init_dist_factor", "must be positive"));
        }
        if p.variants.is_empty() {
            return Err(invalid("pipeline.variants", "at least one variant is required"));
        }
        Ok(())
    }
}
