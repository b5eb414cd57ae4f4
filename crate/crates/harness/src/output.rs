//! Result tables and reconstruction exports.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rsfm_core::sfm::{write_ply, write_poses};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::experiments::{summarize, ExperimentOutput, PipelineRecord, PortSummary};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Csv { path: String, source: csv::Error },
}

pub const RESULTS_HEADER: &str =
    "experiment,variant,port,sigma_px,outlier_frac,trial,rot_err_deg,trans_err,metric2,inlier_ratio,status";

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: Option<&str>) -> Result<(), OutputError> {
    let csv_err = |source| OutputError::Csv {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(header.is_none())
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    if let Some(h) = header {
        w.write_record(h.split(',')).map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn column_notes(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::AbsPose => {
            "# rot_err_deg: rotation error (deg)\n\
             # trans_err: translation error |t - t_gt| (mm)\n\
             # metric2: camera position error |c - c_gt| (mm)\n\
             # inlier_ratio: RANSAC inlier ratio\n"
        }
        ExperimentKind::RelPose => {
            "# rot_err_deg: rotation error (deg)\n\
             # trans_err: distance between unit translation vectors\n\
             # metric2: translation direction error (deg)\n\
             # inlier_ratio: inliers after virtual epipolar re-scoring (bestapprox*), RANSAC inliers (five_point)\n"
        }
        ExperimentKind::Pipeline => {
            "# rot_err_deg: mean camera rotation error after similarity alignment (deg)\n\
             # trans_err: mean camera position error after similarity alignment (mm)\n\
             # metric2: mean distance from reconstructed points to the nearest true point (mm)\n\
             # inlier_ratio: mean registration inlier ratio\n"
        }
    }
}

/// Resolved configuration preceded by a description of the result columns.
pub fn manifest(cfg: &ExperimentConfig) -> String {
    format!(
        "# rsfm experiment manifest\n\
         # results.csv: {RESULTS_HEADER}\n\
         {}\
         # status: ok, or failed: <reason>\n\n{}",
        column_notes(cfg.experiment),
        cfg.to_toml()
    )
}

/// One line of `pipeline_metrics.csv`.
#[derive(Debug, Clone, Serialize)]
struct MetricsLine {
    variant: &'static str,
    port: String,
    trial: usize,
    status: String,
    registered_views: usize,
    points: usize,
    rms_px: f64,
    rot_err_deg: f64,
    pos_err_mm: f64,
    model_err_mm: f64,
    runtime_s: f64,
    true_normal_x: Option<f64>,
    true_normal_y: Option<f64>,
    true_normal_z: Option<f64>,
    true_dist: Option<f64>,
    true_center_x: Option<f64>,
    true_center_y: Option<f64>,
    true_center_z: Option<f64>,
    est_normal_x: Option<f64>,
    est_normal_y: Option<f64>,
    est_normal_z: Option<f64>,
    est_dist: Option<f64>,
    est_center_x: Option<f64>,
    est_center_y: Option<f64>,
    est_center_z: Option<f64>,
}

impl MetricsLine {
    fn new(r: &PipelineRecord) -> Self {
        let t = PortSummary::of(&r.truth);
        let e = r.estimated.as_ref().map(PortSummary::of).unwrap_or_default();
        Self {
            variant: r.row.variant,
            port: r.row.port.clone(),
            trial: r.row.trial,
            status: r.row.status.clone(),
            registered_views: r.registered_views,
            points: r.points,
            rms_px: r.rms_px,
            rot_err_deg: r.row.rot_err_deg,
            pos_err_mm: r.row.trans_err,
            model_err_mm: r.row.metric2,
            runtime_s: r.runtime_s,
            true_normal_x: t.normal_x,
            true_normal_y: t.normal_y,
            true_normal_z: t.normal_z,
            true_dist: t.dist,
            true_center_x: t.center_x,
            true_center_y: t.center_y,
            true_center_z: t.center_z,
            est_normal_x: e.normal_x,
            est_normal_y: e.normal_y,
            est_normal_z: e.normal_z,
            est_dist: e.dist,
            est_center_x: e.center_x,
            est_center_y: e.center_y,
            est_center_z: e.center_z,
        }
    }
}

fn export_name(prefix: &str, record: &PipelineRecord, single_port: bool, ext: &str) -> String {
    if single_port {
        format!("{prefix}_{}.{ext}", record.row.variant)
    } else {
        format!("{prefix}_{}_{}.{ext}", record.row.port, record.row.variant)
    }
}

/// Writes the result tables and the manifest. Pipeline runs also get
/// `pipeline_metrics.csv` plus PLY and pose exports.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_csv(&dir.join("results.csv"), &out.rows, Some(RESULTS_HEADER))?;
    write_csv(&dir.join("summary.csv"), &summarize(&out.rows), None)?;
    let manifest_path = dir.join("manifest.toml");
    fs::write(&manifest_path, manifest(cfg)).map_err(io_err(&manifest_path))?;
    if cfg.experiment != ExperimentKind::Pipeline {
        return Ok(());
    }
    let lines: Vec<MetricsLine> = out.pipeline.iter().map(MetricsLine::new).collect();
    write_csv(&dir.join("pipeline_metrics.csv"), &lines, None)?;
    let single_port = cfg.cameras.len() == 1;
    for r in &out.pipeline {
        let Some(state) = &r.state else { continue };
        let ply = dir.join(export_name("cloud", r, single_port, "ply"));
        let mut w = BufWriter::new(File::create(&ply).map_err(io_err(&ply))?);
        write_ply(&mut w, &state.reconstructed_points())
            .and_then(|_| w.flush())
            .map_err(io_err(&ply))?;
        let poses = dir.join(export_name("poses", r, single_port, "txt"));
        let mut w = BufWriter::new(File::create(&poses).map_err(io_err(&poses))?);
        write_poses(&mut w, state).and_then(|_| w.flush()).map_err(io_err(&poses))?;
    }
    Ok(())
}
