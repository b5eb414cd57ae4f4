//! Numerical tolerances shared by the library and its tests.
//!
//! Every threshold that decides a degeneracy branch lives here.

/// Maximum deviation from unit norm accepted for direction vectors.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// Orthonormality / determinant tolerance for rotation matrices.
pub const ROTATION_TOL: f64 = 1e-10;

/// `|n . d|` below this value means a ray is parallel to a plane.
pub const PARALLEL_RAY_PLANE: f64 = 1e-12;

/// `|d_a x d_b|` below this value means two lines are parallel.
pub const PARALLEL_LINES: f64 = 1e-12;

/// Dome decentering below this norm (meters) is treated as exactly central.
pub const EPSILON_CENTRAL: f64 = 1e-9;

/// Water ray counted as parallel to the refraction axis.
pub const AXIAL_RAY: f64 = 1e-12;

/// Imaginary part below which a companion-matrix eigenvalue is taken as real.
pub const REAL_ROOT_IMAG: f64 = 1e-8;

/// Forward projection stops when the pixel moves less than this (pixels).
pub const FORWARD_PROJECT_STEP_TOL: f64 = 1e-8;

/// Iteration cap for the refractive forward projection.
pub const FORWARD_PROJECT_MAX_ITERS: usize = 100;

/// Consecutive step growths that count as oscillation in forward projection.
pub const FORWARD_PROJECT_GROWTH_LIMIT: usize = 5;

/// Fixed-point iterations used to invert radial distortion.
pub const UNDISTORT_ITERS: usize = 10;

/// Division guard for the Sampson distance denominator.
pub const SAMPSON_EPS: f64 = 1e-15;

/// Relative step for central finite differences.
pub const FD_RELATIVE_STEP: f64 = 1e-7;

/// Default minimum triangulation angle (radians), 1 degree.
pub const MIN_TRIANGULATION_ANGLE: f64 = std::f64::consts::PI / 180.0;

/// Median two-view parallax below which an essential matrix decomposition
/// reports no parallax (radians), 0.1 degree.
pub const MIN_PARALLAX: f64 = 0.1 * std::f64::consts::PI / 180.0;
