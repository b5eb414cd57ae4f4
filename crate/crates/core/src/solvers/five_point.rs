//! Five-point relative pose: the epipolar nullspace is reduced by
//! Gauss-Jordan elimination to a degree-10 hidden-variable polynomial in `z`.

use nalgebra::{DMatrix, SMatrix};

use super::essential::EssentialMatrix;
use super::{poly, PixelPair, SolverError};
use crate::geometry::{Mat3, Vec3};

/// Monomials in (x, y, z) of degree at most three, in elimination order.
const MONOMIALS: [(u8, u8, u8); 20] = [
    (3, 0, 0),
    (0, 3, 0),
    (2, 1, 0),
    (1, 2, 0),
    (2, 0, 1),
    (2, 0, 0),
    (0, 2, 1),
    (0, 2, 0),
    (1, 1, 1),
    (1, 1, 0),
    (1, 0, 2),
    (1, 0, 1),
    (1, 0, 0),
    (0, 1, 2),
    (0, 1, 1),
    (0, 1, 0),
    (0, 0, 3),
    (0, 0, 2),
    (0, 0, 1),
    (0, 0, 0),
];

fn monomial_index(e: (u8, u8, u8)) -> usize {
    MONOMIALS
        .iter()
        .position(|m| *m == e)
        .expect("monomial degree above three")
}

#[derive(Clone, Copy)]
struct P3([f64; 20]);

impl P3 {
    fn zero() -> Self {
        P3([0.0; 20])
    }

    fn linear(x: f64, y: f64, z: f64, w: f64) -> Self {
        let mut p = Self::zero();
        p.0[monomial_index((1, 0, 0))] = x;
        p.0[monomial_index((0, 1, 0))] = y;
        p.0[monomial_index((0, 0, 1))] = z;
        p.0[monomial_index((0, 0, 0))] = w;
        p
    }

    fn add(&self, o: &P3) -> P3 {
        let mut out = *self;
        for i in 0..20 {
            out.0[i] += o.0[i];
        }
        out
    }

    fn scale(&self, s: f64) -> P3 {
        let mut out = *self;
        out.0.iter_mut().for_each(|v| *v *= s);
        out
    }

    fn eval(&self, x: f64, y: f64, z: f64) -> f64 {
        MONOMIALS
            .iter()
            .zip(self.0.iter())
            .map(|(e, c)| c * x.powi(e.0 as i32) * y.powi(e.1 as i32) * z.powi(e.2 as i32))
            .sum()
    }

    fn gradient(&self, x: f64, y: f64, z: f64) -> Vec3 {
        let mut g = Vec3::zeros();
        for (e, c) in MONOMIALS.iter().zip(self.0.iter()) {
            let (a, b, d) = (e.0 as i32, e.1 as i32, e.2 as i32);
            if a > 0 {
                g.x += c * a as f64 * x.powi(a - 1) * y.powi(b) * z.powi(d);
            }
            if b > 0 {
                g.y += c * b as f64 * x.powi(a) * y.powi(b - 1) * z.powi(d);
            }
            if d > 0 {
                g.z += c * d as f64 * x.powi(a) * y.powi(b) * z.powi(d - 1);
            }
        }
        g
    }

    fn mul(&self, o: &P3) -> P3 {
        let mut out = Self::zero();
        for (i, a) in self.0.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in o.0.iter().enumerate() {
                if *b == 0.0 {
                    continue;
                }
                let (ei, ej) = (MONOMIALS[i], MONOMIALS[j]);
                let e = (ei.0 + ej.0, ei.1 + ej.1, ei.2 + ej.2);
                assert!(e.0 + e.1 + e.2 <= 3, "product exceeds degree three");
                out.0[monomial_index(e)] += a * b;
            }
        }
        out
    }
}

type PMat = [[P3; 3]; 3];

/// Gauss-Newton on the ten cubic constraints; keeps the input when a step
/// does not reduce the residual.
fn polish(rows: &[P3], x: f64, y: f64, z: f64) -> (f64, f64, f64) {
    let residual = |p: &Vec3| rows.iter().map(|r| r.eval(p.x, p.y, p.z).powi(2)).sum::<f64>();
    let mut p = Vec3::new(x, y, z);
    let mut cost = residual(&p);
    for _ in 0..5 {
        let mut jtj = nalgebra::Matrix3::zeros();
        let mut jtr = Vec3::zeros();
        for r in rows {
            let g = r.gradient(p.x, p.y, p.z);
            jtj += g * g.transpose();
            jtr += g * r.eval(p.x, p.y, p.z);
        }
        let Some(step) = jtj.try_inverse().map(|inv| inv * jtr) else { break };
        let cand = p - step;
        let c = residual(&cand);
        if !(c < cost) {
            break;
        }
        p = cand;
        cost = c;
    }
    (p.x, p.y, p.z)
}

fn pmat_mul(a: &PMat, b: &PMat) -> PMat {
    let mut out = [[P3::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let mut acc = P3::zero();
            for k in 0..3 {
                acc = acc.add(&a[r][k].mul(&b[k][c]));
            }
            out[r][c] = acc;
        }
    }
    out
}

fn pmat_transpose(a: &PMat) -> PMat {
    let mut out = [[P3::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[c][r];
        }
    }
    out
}

/// Essential matrices `E` with `x_b^T E x_a = 0` for all five pairs,
/// normalized to unit Frobenius norm.
pub fn solve_five_point(pairs: &[PixelPair]) -> Result<Vec<EssentialMatrix>, SolverError> {
    if pairs.len() != 5 {
        return Err(SolverError::InvalidInput("five correspondences required"));
    }
    let mut q = DMatrix::zeros(9, 9);
    for (i, p) in pairs.iter().enumerate() {
        let (a, b) = (p.hom_a(), p.hom_b());
        for r in 0..3 {
            for c in 0..3 {
                q[(i, 3 * r + c)] = b[r] * a[c];
            }
        }
    }
    if !q.iter().all(|v: &f64| v.is_finite()) {
        return Err(SolverError::InvalidInput("non-finite coordinates"));
    }
    let svd = q.svd(false, true);
    let v_t = svd.v_t.ok_or(SolverError::NumericalFailure("SVD failed"))?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s = |k: usize| svd.singular_values[order[k]];
    if s(4) <= 1e-10 * s(0) {
        return Err(SolverError::NumericalFailure("epipolar constraints are rank deficient"));
    }
    let basis: Vec<Mat3> = (5..9)
        .map(|k| {
            let row = v_t.row(order[k]);
            Mat3::from_fn(|r, c| row[3 * r + c])
        })
        .collect();
    let (bx, by, bz, bw) = (basis[0], basis[1], basis[2], basis[3]);

    let mut e: PMat = [[P3::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            e[r][c] = P3::linear(bx[(r, c)], by[(r, c)], bz[(r, c)], bw[(r, c)]);
        }
    }

    let mut rows: Vec<P3> = Vec::with_capacity(10);
    let det = e[0][0].mul(&e[1][1].mul(&e[2][2]).add(&e[1][2].mul(&e[2][1]).scale(-1.0)))
        .add(&e[0][1].mul(&e[1][2].mul(&e[2][0]).add(&e[1][0].mul(&e[2][2]).scale(-1.0))))
        .add(&e[0][2].mul(&e[1][0].mul(&e[2][1]).add(&e[1][1].mul(&e[2][0]).scale(-1.0))));
    rows.push(det);
    let eet = pmat_mul(&e, &pmat_transpose(&e));
    let trace = eet[0][0].add(&eet[1][1]).add(&eet[2][2]);
    let eete = pmat_mul(&eet, &e);
    for r in 0..3 {
        for c in 0..3 {
            rows.push(eete[r][c].scale(2.0).add(&trace.mul(&e[r][c]).scale(-1.0)));
        }
    }

    let mut m = SMatrix::<f64, 10, 20>::zeros();
    for (i, p) in rows.iter().enumerate() {
        for j in 0..20 {
            m[(i, j)] = p.0[j];
        }
    }
    let scale = m.amax();
    if !(scale > 0.0) {
        return Err(SolverError::NumericalFailure("vanishing constraint matrix"));
    }
    for col in 0..10 {
        let (pivot, value) = (col..10)
            .map(|r| (r, m[(r, col)].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if value <= 1e-12 * scale {
            return Err(SolverError::NumericalFailure("singular elimination template"));
        }
        m.swap_rows(col, pivot);
        let inv = 1.0 / m[(col, col)];
        for j in 0..20 {
            m[(col, j)] *= inv;
        }
        for r in 0..10 {
            if r != col {
                let f = m[(r, col)];
                if f != 0.0 {
                    for j in 0..20 {
                        m[(r, j)] -= f * m[(col, j)];
                    }
                }
            }
        }
    }

    // Each reduced row r reads: lead_r + x*px_r(z) + y*py_r(z) + p1_r(z) = 0.
    let tail = |r: usize| {
        let b = |k: usize| m[(r, 10 + k)];
        (
            vec![b(2), b(1), b(0)],
            vec![b(5), b(4), b(3)],
            vec![b(9), b(8), b(7), b(6)],
        )
    };
    let z_poly = [0.0, 1.0];
    let combine = |hi: usize, lo: usize| -> [Vec<f64>; 3] {
        let (hx, hy, h1) = tail(hi);
        let (lx, ly, l1) = tail(lo);
        [
            poly::sub(&hx, &poly::mul(&z_poly, &lx)),
            poly::sub(&hy, &poly::mul(&z_poly, &ly)),
            poly::sub(&h1, &poly::mul(&z_poly, &l1)),
        ]
    };
    // Rows 4/5: x^2 z and x^2; 6/7: y^2 z and y^2; 8/9: xyz and xy.
    let bm = [combine(4, 5), combine(6, 7), combine(8, 9)];
    let minor = |r1: usize, r2: usize, c1: usize, c2: usize| {
        poly::sub(&poly::mul(&bm[r1][c1], &bm[r2][c2]), &poly::mul(&bm[r1][c2], &bm[r2][c1]))
    };
    let det_z = poly::add(
        &poly::sub(&poly::mul(&bm[0][0], &minor(1, 2, 1, 2)), &poly::mul(&bm[0][1], &minor(1, 2, 0, 2))),
        &poly::mul(&bm[0][2], &minor(1, 2, 0, 1)),
    );

    let mut out = Vec::new();
    for z in poly::real_roots(&det_z)? {
        let row = |i: usize| Vec3::new(poly::eval(&bm[i][0], z), poly::eval(&bm[i][1], z), poly::eval(&bm[i][2], z));
        let (r0, r1, r2) = (row(0), row(1), row(2));
        let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
        let v = candidates
            .iter()
            .copied()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .unwrap();
        if v.z.abs() <= 1e-14 * v.norm() || v.norm() == 0.0 {
            continue;
        }
        let (x, y, z) = polish(&rows, v.x / v.z, v.y / v.z, z);
        let em = bx * x + by * y + bz * z + bw;
        let norm = em.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            continue;
        }
        out.push(EssentialMatrix(em / norm));
    }
    Ok(out)
}
