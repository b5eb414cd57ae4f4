use rsfm_harness::config::{CameraSpec, ExperimentConfig, ExperimentKind, PipelineVariant, TILTED_NORMAL};
use rsfm_harness::experiments::*;
use rsfm_harness::output::{write_outputs, RESULTS_HEADER};

fn abs_config(cameras: Vec<CameraSpec>, sigmas: Vec<f64>, trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        cameras,
        sigmas,
        trials,
        ..ExperimentConfig::default_for(ExperimentKind::AbsPose)
    }
}

fn rows_of<'a>(rows: &'a [ResultRow], variant: &str) -> Vec<&'a ResultRow> {
    rows.iter().filter(|r| r.variant == variant).collect()
}

#[test]
fn pinhole_paths_agree() {
    let cfg = abs_config(vec![CameraSpec::pinhole("pinhole")], vec![0.0], 12);
    let rows = run_abs_pose_experiment(&cfg).unwrap();
    let (gp3p, p3p) = (rows_of(&rows, "gp3p"), rows_of(&rows, "p3p"));
    assert_eq!(gp3p.len(), 12);
    assert_eq!(p3p.len(), 12);
    for (a, b) in gp3p.iter().zip(&p3p) {
        assert!(a.ok() && b.ok());
        assert_eq!(a.trial, b.trial);
        assert!((a.rot_err_deg - b.rot_err_deg).abs() < 1e-9);
        assert!((a.trans_err - b.trans_err).abs() < 1e-9);
        assert!((a.metric2 - b.metric2).abs() < 1e-9);
        assert!((a.inlier_ratio - b.inlier_ratio).abs() < 1e-9);
    }
}

#[test]
fn centered_dome_is_exact_without_noise() {
    let cfg = abs_config(vec![CameraSpec::dome("dome_centered", [0.0; 3])], vec![0.0], 10);
    for r in run_abs_pose_experiment(&cfg).unwrap() {
        assert!(r.ok(), "{}", r.status);
        assert!(r.rot_err_deg < 1e-6, "{r:?}");
        assert!(r.metric2 < 1e-6, "{r:?}");
        assert!((r.inlier_ratio - 0.7).abs() < 1e-12);
    }
}

#[test]
fn relative_pose_is_exact_without_noise() {
    let cfg = ExperimentConfig {
        cameras: vec![CameraSpec::dome("dome_centered", [0.0; 3])],
        sigmas: vec![0.0],
        outlier_fraction: 0.0,
        trials: 8,
        ..ExperimentConfig::default_for(ExperimentKind::RelPose)
    };
    let rows = run_rel_pose_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 24);
    for r in rows {
        assert!(r.ok(), "{}", r.status);
        assert!(r.rot_err_deg < 0.01, "{r:?}");
        assert!(r.metric2 < 0.01, "{r:?}");
    }
}

#[test]
fn output_is_independent_of_pool_size() {
    let cfg = abs_config(vec![CameraSpec::flat("flat", [0.0, 0.0, 1.0], 0.01)], vec![0.0, 1.0], 6);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_abs_pose_experiment(&cfg).unwrap())
    };
    let one = run(1);
    let three = run(3);
    assert_eq!(format!("{one:?}"), format!("{three:?}"));
}

#[test]
fn results_file_has_stable_header() {
    let cfg = abs_config(vec![CameraSpec::dome("dome", [0.0, 0.0, 0.003])], vec![0.5], 3);
    let out = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(dir.path(), &cfg, &out).unwrap();
    let results = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(results.lines().next().unwrap(), RESULTS_HEADER);
    assert_eq!(results.lines().count(), 1 + 6);
    assert!(!results.contains('\r'));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains("metric2: camera position error"));
    let body: String = manifest.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    assert_eq!(ExperimentConfig::from_toml(&body).unwrap(), cfg);
    assert!(dir.path().join("summary.csv").exists());
}

#[test]
fn summary_groups_by_variant_port_and_sigma() {
    let cfg = abs_config(vec![CameraSpec::dome("dome_centered", [0.0; 3])], vec![0.0, 1.0], 4);
    let rows = run_abs_pose_experiment(&cfg).unwrap();
    let summary = summarize(&rows);
    assert_eq!(summary.len(), 4);
    for s in &summary {
        assert_eq!(s.trials, 4);
        let values: Vec<f64> = rows
            .iter()
            .filter(|r| r.variant == s.variant && r.sigma_px == s.sigma_px)
            .map(|r| r.rot_err_deg)
            .collect();
        assert_eq!(s.rot_err_deg_median, median(&values));
    }
    assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
}

#[test]
fn small_pipeline_writes_exports() {
    let mut cfg = ExperimentConfig::default_for(ExperimentKind::Pipeline);
    cfg.cameras = vec![CameraSpec::flat("flat_tilted", TILTED_NORMAL, 0.02)];
    cfg.pipeline.views = 8;
    cfg.pipeline.row_length = 4;
    cfg.pipeline.points = 250;
    cfg.pipeline.variants = vec![PipelineVariant::RsfmGt];
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.rows.len(), 1);
    let r = &out.rows[0];
    assert!(r.ok(), "{}", r.status);
    assert!(r.metric2 < 20.0, "{r:?}");
    let dir = tempfile::tempdir().unwrap();
    write_outputs(dir.path(), &cfg, &out).unwrap();
    for name in ["results.csv", "pipeline_metrics.csv", "cloud_rsfm_gt.ply", "poses_rsfm_gt.txt"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let ply = std::fs::read_to_string(dir.path().join("cloud_rsfm_gt.ply")).unwrap();
    assert!(ply.starts_with("ply\nformat ascii 1.0"));
}
