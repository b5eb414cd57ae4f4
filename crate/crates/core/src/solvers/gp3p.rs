//! Generalized three-point absolute pose for rays with distinct origins.
//!
//! Unknowns are the depths along the three rays. The pairwise distance
//! constraints are reduced by two resultants to an octic in the second
//! depth; the remaining depths follow by back-substitution.

use super::{check_not_collinear, poly, push_candidate, RayPointCorrespondence, SolverError};
use crate::geometry::SE3Pose;

/// Polynomial in (l2, l3): entry `j` holds the coefficients in l2 of `l3^j`.
type Bivariate = Vec<Vec<f64>>;

fn bi_add(a: &Bivariate, b: &Bivariate) -> Bivariate {
    let mut out = vec![Vec::new(); a.len().max(b.len())];
    for (j, slot) in out.iter_mut().enumerate() {
        let empty = Vec::new();
        *slot = poly::add(a.get(j).unwrap_or(&empty), b.get(j).unwrap_or(&empty));
    }
    out
}

fn bi_neg(a: &Bivariate) -> Bivariate {
    a.iter().map(|p| poly::scale(p, -1.0)).collect()
}

fn bi_sub(a: &Bivariate, b: &Bivariate) -> Bivariate {
    bi_add(a, &bi_neg(b))
}

fn bi_mul(a: &Bivariate, b: &Bivariate) -> Bivariate {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Vec::new(); a.len() + b.len() - 1];
    for (i, pa) in a.iter().enumerate() {
        for (j, pb) in b.iter().enumerate() {
            out[i + j] = poly::add(&out[i + j], &poly::mul(pa, pb));
        }
    }
    out
}

/// Camera-from-world poses consistent with three (possibly non-concurrent)
/// rays. Returns up to eight candidates.
pub fn solve_gp3p(corrs: &[RayPointCorrespondence; 3]) -> Result<Vec<SE3Pose>, SolverError> {
    check_not_collinear([&corrs[0].point, &corrs[1].point, &corrs[2].point])?;
    let o = [corrs[0].ray.origin, corrs[1].ray.origin, corrs[2].ray.origin];
    let d = [
        corrs[0].ray.direction.into_inner(),
        corrs[1].ray.direction.into_inner(),
        corrs[2].ray.direction.into_inner(),
    ];
    let dist2 = |i: usize, j: usize| (corrs[i].point - corrs[j].point).norm_squared();
    let (o12, o13, o23) = (o[0] - o[1], o[0] - o[2], o[1] - o[2]);
    let (c12, c13, c23) = (d[0].dot(&d[1]), d[0].dot(&d[2]), d[1].dot(&d[2]));

    // Each constraint is monic in its first depth: l1^2 + a l1 + b.
    let a1: Bivariate = vec![vec![2.0 * d[0].dot(&o12), -2.0 * c12]];
    let b1: Bivariate = vec![vec![o12.norm_squared() - dist2(0, 1), -2.0 * d[1].dot(&o12), 1.0]];
    let a2: Bivariate = vec![vec![2.0 * d[0].dot(&o13)], vec![-2.0 * c13]];
    let b2: Bivariate = vec![vec![o13.norm_squared() - dist2(0, 2)], vec![-2.0 * d[2].dot(&o13)], vec![1.0]];
    // l3^2 + a3 l3 + b3 = 0 with a3, b3 polynomials in l2.
    let a3 = vec![-2.0 * d[2].dot(&o23), -2.0 * c23];
    let b3 = vec![o23.norm_squared() - dist2(1, 2), 2.0 * d[1].dot(&o23), 1.0];

    // Resultant of the two quadratics in l1.
    let db = bi_sub(&b1, &b2);
    let da = bi_sub(&a1, &a2);
    let cross = bi_sub(&bi_mul(&a1, &b2), &bi_mul(&a2, &b1));
    let mut res = bi_add(&bi_mul(&db, &db), &bi_mul(&da, &cross));

    // Reduce modulo the third constraint, monic in l3.
    for j in (2..res.len()).rev() {
        let coef = std::mem::take(&mut res[j]);
        res[j - 1] = poly::sub(&res[j - 1], &poly::mul(&coef, &a3));
        res[j - 2] = poly::sub(&res[j - 2], &poly::mul(&coef, &b3));
    }
    let r0 = res.first().cloned().unwrap_or_default();
    let r1 = res.get(1).cloned().unwrap_or_default();
    let octic = poly::add(
        &poly::sub(&poly::mul(&r0, &r0), &poly::mul(&poly::mul(&a3, &r0), &r1)),
        &poly::mul(&b3, &poly::mul(&r1, &r1)),
    );

    let quadratic_roots = |a: f64, b: f64| -> Vec<f64> {
        let disc = a * a - 4.0 * b;
        if disc < 0.0 {
            return Vec::new();
        }
        let s = disc.sqrt();
        vec![0.5 * (-a + s), 0.5 * (-a - s)]
    };

    let mut out = Vec::new();
    for l2 in poly::real_roots(&octic)? {
        if l2 <= 0.0 {
            continue;
        }
        // Both roots of the third constraint are tried; candidates that do
        // not satisfy all three constraints are rejected downstream.
        let (a3v, b3v) = (poly::eval(&a3, l2), poly::eval(&b3, l2));
        let (v0, v1) = (poly::eval(&r0, l2), poly::eval(&r1, l2));
        let mut l3_candidates = quadratic_roots(a3v, b3v);
        if v1 != 0.0 {
            l3_candidates.push(-v0 / v1);
        }
        for l3 in l3_candidates {
            if l3 <= 0.0 {
                continue;
            }
            let eval_bi = |p: &Bivariate| -> f64 {
                p.iter()
                    .enumerate()
                    .map(|(j, c)| poly::eval(c, l2) * l3.powi(j as i32))
                    .sum()
            };
            let (a1v, b1v, a2v, b2v) = (eval_bi(&a1), eval_bi(&b1), eval_bi(&a2), eval_bi(&b2));
            let mut l1_candidates = quadratic_roots(a1v, b1v);
            if a1v != a2v {
                l1_candidates.push(-(b1v - b2v) / (a1v - a2v));
            }
            for l1 in l1_candidates {
                push_candidate(corrs, [l1, l2, l3], &mut out);
            }
        }
    }
    Ok(out)
}
