//! Small univariate polynomial helpers. Coefficients are stored in
//! ascending order of degree.

use nalgebra::{DMatrix, Schur};

use super::SolverError;
use crate::numerics;

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, v) in a.iter().enumerate() {
        out[i] += v;
    }
    for (i, v) in b.iter().enumerate() {
        out[i] += v;
    }
    out
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = b.iter().map(|v| -v).collect();
    add(a, &neg)
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|v| v * s).collect()
}

pub fn eval(a: &[f64], x: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn derivative(a: &[f64]) -> Vec<f64> {
    a.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect()
}

/// Coefficients of `p(y + s)`.
fn taylor_shift(c: &[f64], s: f64) -> Vec<f64> {
    if s == 0.0 {
        return c.to_vec();
    }
    let mut out = c.to_vec();
    let n = out.len();
    for i in 0..n {
        for j in (i..n - 1).rev() {
            out[j] += s * out[j + 1];
        }
    }
    out
}

fn companion_eigenvalues(c: &[f64]) -> Option<Vec<nalgebra::Complex<f64>>> {
    let degree = c.len() - 1;
    let lead = c[degree];
    if lead == 0.0 {
        return None;
    }
    let mut companion = DMatrix::zeros(degree, degree);
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..degree {
        companion[(i, degree - 1)] = -c[i] / lead;
    }
    let schur = Schur::try_new(companion, f64::EPSILON, 2_000)?;
    Some(schur.complex_eigenvalues().iter().copied().collect())
}

/// Real roots via the eigenvalues of the companion matrix. An eigenvalue is
/// accepted as real when its imaginary part is below `REAL_ROOT_IMAG`
/// (relative to its magnitude once above one); accepted roots are polished
/// with a few Newton steps.
pub fn real_roots(coeffs: &[f64]) -> Result<Vec<f64>, SolverError> {
    if !coeffs.iter().all(|c| c.is_finite()) {
        return Err(SolverError::NumericalFailure("non-finite polynomial coefficient"));
    }
    let max = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max == 0.0 {
        return Err(SolverError::NumericalFailure("zero polynomial"));
    }
    let mut degree = coeffs.len() - 1;
    while degree > 0 && coeffs[degree].abs() <= 1e-14 * max {
        degree -= 1;
    }
    let c = &coeffs[..=degree];
    match degree {
        0 => return Ok(Vec::new()),
        1 => return Ok(vec![-c[0] / c[1]]),
        _ => {}
    }
    // Rescale the variable so the coefficients are balanced; the roots of
    // the scaled polynomial are the original roots divided by `sigma`.
    let first = c.iter().position(|v| *v != 0.0).unwrap_or(0);
    let sigma = if first < degree {
        (c[first].abs() / c[degree].abs()).powf(1.0 / (degree - first) as f64)
    } else {
        1.0
    };
    let sigma = if sigma.is_finite() && sigma > 0.0 { sigma } else { 1.0 };
    let scaled: Vec<f64> = c.iter().enumerate().map(|(i, v)| v * sigma.powi(i as i32)).collect();
    // QR iterations can stall when roots come in pairs of equal modulus
    // (e.g. even polynomials); a shift of the variable breaks the symmetry.
    let eigenvalues = [0.0, 0.37, -0.61]
        .iter()
        .find_map(|&shift| companion_eigenvalues(&taylor_shift(&scaled, shift)).map(|ev| (shift, ev)));
    let Some((shift, eigenvalues)) = eigenvalues else {
        return Err(SolverError::NumericalFailure("companion eigenvalues did not converge"));
    };
    let d = derivative(c);
    let mut roots = Vec::new();
    for z in eigenvalues {
        let re = z.re + shift;
        if z.im.abs() > numerics::REAL_ROOT_IMAG * re.abs().max(1.0) {
            continue;
        }
        let mut x = re * sigma;
        for _ in 0..3 {
            let dp = eval(&d, x);
            if dp == 0.0 {
                break;
            }
            let step = eval(c, x) / dp;
            if !step.is_finite() {
                break;
            }
            let next = x - step;
            if eval(c, next).abs() > eval(c, x).abs() {
                break;
            }
            x = next;
        }
        roots.push(x);
    }
    Ok(roots)
}
