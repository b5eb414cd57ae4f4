use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use rsfm_harness::config::{ConfigError, ExperimentConfig, ExperimentKind};
use rsfm_harness::experiments::{run_experiment, summarize};
use rsfm_harness::output::write_outputs;
use rsfm_harness::selftest::run_selftest;

#[derive(Debug, Parser)]
#[command(name = "rsfm", version, about = "Refractive structure-from-motion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "rsfm-out")]
    out: PathBuf,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Absolute pose: GP3P on refracted data against P3P on unrefracted data.
    AbsPose,
    /// Relative pose: best-approximated pinhole with and without refinement
    /// against the five-point baseline.
    RelPose,
    /// Incremental reconstruction of a lawn-mower survey.
    Pipeline,
    /// Noise-free invariant suite.
    Selftest,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn resolve(cli: &Cli, kind: ExperimentKind) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default_for(kind),
    };
    if cfg.experiment != kind {
        return Err(ConfigError::Invalid {
            key: "experiment".into(),
            message: format!("is `{}` but the subcommand runs `{}`", cfg.experiment.name(), kind.name()),
        });
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = cli.trials {
        cfg.trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, kind: ExperimentKind) -> ExitCode {
    let cfg = match resolve(cli, kind) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    info!("running {} with seed {} and {} trials", kind.name(), cfg.seed, cfg.trials);
    let out = match run_experiment(&cfg) {
        Ok(out) => out,
        Err(e) => {
            error!("{e}");
            eprintln!("experiment failed: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    if let Err(e) = write_outputs(&cli.out, &cfg, &out) {
        eprintln!("{e}");
        return ExitCode::from(EXIT_FAILURE);
    }
    if !cli.quiet {
        for s in summarize(&out.rows) {
            println!(
                "{:<20} {:<16} sigma {:>5.2}  rot {:>9.4}  trans {:>9.4}  metric2 {:>9.4}  inliers {:>6.4}  failed {}/{}",
                s.variant,
                s.port,
                s.sigma_px,
                s.rot_err_deg_median,
                s.trans_err_median,
                s.metric2_median,
                s.inlier_ratio_mean,
                s.failures,
                s.trials
            );
        }
        println!("results written to {}", cli.out.display());
    }
    if out.rows.is_empty() || out.failures() == out.rows.len() {
        eprintln!("every trial failed");
        return ExitCode::from(EXIT_FAILURE);
    }
    ExitCode::SUCCESS
}

fn selftest(cli: &Cli) -> ExitCode {
    let checks = run_selftest(cli.seed.unwrap_or(1));
    let mut ok = true;
    for c in &checks {
        ok &= c.passed;
        if !cli.quiet || !c.passed {
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILURE)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::AbsPose => run(&cli, ExperimentKind::AbsPose),
        Command::RelPose => run(&cli, ExperimentKind::RelPose),
        Command::Pipeline => run(&cli, ExperimentKind::Pipeline),
        Command::Selftest => selftest(&cli),
    }
}
