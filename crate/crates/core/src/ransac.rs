//! Hypothesize-and-verify robust estimation with adaptive termination.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacOptions {
    /// Inlier threshold in the residual's units.
    pub threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_iterations: usize,
    pub seed: u64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        Self {
            threshold: 2.0,
            confidence: 0.9999,
            max_iterations: 10_000,
            min_iterations: 100,
            seed: 0,
        }
    }
}

impl RansacOptions {
    pub fn validate(&self) -> Result<(), RansacError> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(RansacError::InvalidOptions("confidence must lie in (0, 1)"));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(RansacError::InvalidOptions("threshold must be positive"));
        }
        if self.max_iterations == 0 || self.min_iterations > self.max_iterations {
            return Err(RansacError::InvalidOptions("iteration bounds are inconsistent"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacReport<M> {
    pub model: M,
    pub inlier_mask: Vec<bool>,
    pub inlier_ratio: f64,
    pub num_inliers: usize,
    pub iterations: usize,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RansacError {
    #[error("invalid RANSAC options: {0}")]
    InvalidOptions(&'static str),
    #[error("{available} data points are fewer than the minimal sample of {required}")]
    InsufficientData { available: usize, required: usize },
    #[error("no hypothesis reached the minimal inlier count")]
    Failed,
}

/// Problem definition for [`ransac`].
pub trait Estimator {
    type Model: Clone;

    fn sample_size(&self) -> usize;

    fn num_data(&self) -> usize;

    /// Candidate models from a minimal sample.
    fn fit(&self, sample: &[usize]) -> Vec<Self::Model>;

    /// Residual of datum `index` under `model`; non-finite means invalid.
    fn residual(&self, model: &Self::Model, index: usize) -> f64;
}

/// Required iterations for `confidence` given inlier fraction `w`.
pub fn adaptive_iterations(confidence: f64, inlier_fraction: f64, sample_size: usize) -> usize {
    let p_good = inlier_fraction.powi(sample_size as i32);
    if p_good >= 1.0 {
        return 0;
    }
    if p_good <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if n.is_finite() {
        n.ceil().max(0.0) as usize
    } else {
        usize::MAX
    }
}

/// Per-iteration random stream, independent of scheduling.
fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

struct Score {
    inliers: usize,
    mean_residual: f64,
}

fn score<E: Estimator>(est: &E, model: &E::Model, threshold: f64) -> (Score, Vec<bool>) {
    let mut mask = vec![false; est.num_data()];
    let mut count = 0;
    let mut sum = 0.0;
    for (i, m) in mask.iter_mut().enumerate() {
        let r = est.residual(model, i);
        if r.is_finite() && r <= threshold {
            *m = true;
            count += 1;
            sum += r;
        }
    }
    let mean_residual = if count > 0 { sum / count as f64 } else { f64::INFINITY };
    (
        Score {
            inliers: count,
            mean_residual,
        },
        mask,
    )
}

pub fn ransac<E: Estimator>(est: &E, options: &RansacOptions) -> Result<RansacReport<E::Model>, RansacError> {
    options.validate()?;
    let n = est.num_data();
    let s = est.sample_size();
    if n < s {
        return Err(RansacError::InsufficientData {
            available: n,
            required: s,
        });
    }
    let mut best: Option<(E::Model, Score, Vec<bool>)> = None;
    let mut required = options.max_iterations;
    let mut iterations = 0;
    while iterations < options.max_iterations && (iterations < options.min_iterations || iterations < required) {
        let mut rng = iteration_rng(options.seed, iterations);
        iterations += 1;
        let sample_idx = sample(&mut rng, n, s).into_vec();
        for model in est.fit(&sample_idx) {
            let (sc, mask) = score(est, &model, options.threshold);
            let better = match &best {
                None => sc.inliers > 0,
                Some((_, b, _)) => {
                    sc.inliers > b.inliers || (sc.inliers == b.inliers && sc.mean_residual < b.mean_residual)
                }
            };
            if better {
                let w = sc.inliers as f64 / n as f64;
                required = adaptive_iterations(options.confidence, w, s).min(options.max_iterations);
                best = Some((model, sc, mask));
            }
        }
    }
    match best {
        Some((model, sc, mask)) if sc.inliers >= s => Ok(RansacReport {
            model,
            inlier_ratio: sc.inliers as f64 / n as f64,
            num_inliers: sc.inliers,
            inlier_mask: mask,
            iterations,
            success: true,
        }),
        _ => Err(RansacError::Failed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Fits a 2D line y = a x + b from two points.
    struct Line {
        pts: Vec<(f64, f64)>,
    }

    impl Estimator for Line {
        type Model = (f64, f64);

        fn sample_size(&self) -> usize {
            2
        }

        fn num_data(&self) -> usize {
            self.pts.len()
        }

        fn fit(&self, s: &[usize]) -> Vec<(f64, f64)> {
            let (p, q) = (self.pts[s[0]], self.pts[s[1]]);
            if (q.0 - p.0).abs() < 1e-12 {
                return Vec::new();
            }
            let a = (q.1 - p.1) / (q.0 - p.0);
            vec![(a, p.1 - a * p.0)]
        }

        fn residual(&self, m: &(f64, f64), i: usize) -> f64 {
            let (x, y) = self.pts[i];
            (y - m.0 * x - m.1).abs()
        }
    }

    fn data(outliers: usize, n: usize) -> Line {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = (0..n)
            .map(|i| {
                let x = rng.random_range(-5.0..5.0);
                if i < outliers {
                    (x, rng.random_range(-50.0..50.0))
                } else {
                    (x, 2.0 * x - 1.0 + rng.random_range(-0.01..0.01))
                }
            })
            .collect();
        Line { pts }
    }

    #[test]
    fn outlier_free_stops_at_min_iterations() {
        let opts = RansacOptions { threshold: 0.05, ..Default::default() };
        let r = ransac(&data(0, 50), &opts).unwrap();
        assert_eq!(r.inlier_ratio, 1.0);
        assert_eq!(r.iterations, opts.min_iterations);
    }

    #[test]
    fn finds_inliers_among_outliers() {
        let opts = RansacOptions { threshold: 0.05, ..Default::default() };
        let r = ransac(&data(30, 100), &opts).unwrap();
        assert!((r.model.0 - 2.0).abs() < 0.01);
        assert!(r.inlier_mask[30..].iter().all(|m| *m));
        let expected = r.inlier_mask.iter().filter(|m| **m).count() as f64 / 100.0;
        assert_eq!(r.inlier_ratio, expected);
    }

    #[test]
    fn deterministic_under_seed() {
        let opts = RansacOptions { threshold: 0.05, seed: 99, ..Default::default() };
        let d = data(40, 100);
        assert_eq!(ransac(&d, &opts).unwrap(), ransac(&d, &opts).unwrap());
    }

    #[test]
    fn too_little_data() {
        let d = Line { pts: vec![(0.0, 1.0)] };
        assert!(matches!(ransac(&d, &RansacOptions::default()), Err(RansacError::InsufficientData { .. })));
    }

    #[test]
    fn adaptive_bound() {
        assert_eq!(adaptive_iterations(0.99, 1.0, 3), 0);
        let n = adaptive_iterations(0.9999, 0.7, 3);
        assert!((n as f64 - ((1e-4f64).ln() / (1.0 - 0.343f64).ln()).ceil()).abs() < 1.0);
        assert!(adaptive_iterations(0.9999, 0.0, 3) == usize::MAX);
    }

    #[test]
    fn invalid_options() {
        let opts = RansacOptions { confidence: 1.0, ..Default::default() };
        assert!(ransac(&data(0, 10), &opts).is_err());
    }
}
