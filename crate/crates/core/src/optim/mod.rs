//! Nonlinear least squares and the refractive refinement problems built on it.

pub mod loss;
pub mod manifold;
pub mod bundle;
pub mod problem;
pub mod relative;

pub use bundle::{
    bundle_adjust, bundle_problem, observation_errors, reprojection_rms, BundleBlocks, BundleData, BundleObservation,
    BundleOptions, BundleReport, PortRefinement, PositionPrior, ScaleGauge,
};
pub use loss::RobustLoss;
pub use manifold::Manifold;
pub use problem::{BlockId, CostFunction, FnCost, LMOptions, Problem, SolveReport, Termination};
pub use relative::{refine_relative_pose_virtual_epipolar, EpipolarResidual, RelativeRefineOptions, RelativeRefinement};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("numerical failure: {0}")]
    NumericalFailure(&'static str),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("gauge is under-constrained: fix a pose or the scale, or add position priors")]
    GaugeUnderconstrained,
}
