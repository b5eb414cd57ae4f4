use nalgebra::{DMatrix, Rotation3, Vector3};

use crate::geometry::{skew, Mat3, Vec3};

/// Local parameterization of a parameter block.
///
/// Rotation blocks hold a row-major 3x3 matrix (9 values) and are updated by
/// left multiplication with `exp(delta)`. Se3 blocks hold the rotation
/// followed by the translation (12 values).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Manifold {
    Euclidean,
    UnitSphere,
    Rotation,
    Se3,
}

impl Manifold {
    pub fn ambient_dim(&self, len: usize) -> usize {
        match self {
            Manifold::Euclidean => len,
            Manifold::UnitSphere => 3,
            Manifold::Rotation => 9,
            Manifold::Se3 => 12,
        }
    }

    pub fn tangent_dim(&self, len: usize) -> usize {
        match self {
            Manifold::Euclidean => len,
            Manifold::UnitSphere => 2,
            Manifold::Rotation => 3,
            Manifold::Se3 => 6,
        }
    }
}

pub fn mat3_from_slice(values: &[f64]) -> Mat3 {
    Mat3::new(
        values[0], values[1], values[2], values[3], values[4], values[5], values[6], values[7],
        values[8],
    )
}

pub fn mat3_to_vec(m: &Mat3) -> Vec<f64> {
    let mut out = Vec::with_capacity(9);
    for r in 0..3 {
        for c in 0..3 {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// Orthonormal basis of the tangent plane of the unit sphere at `x`.
pub fn sphere_basis(x: &Vec3) -> (Vec3, Vec3) {
    let helper = if x.x.abs() <= x.y.abs() && x.x.abs() <= x.z.abs() {
        Vec3::x()
    } else if x.y.abs() <= x.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let b1 = x.cross(&helper).normalize();
    let b2 = x.cross(&b1).normalize();
    (b1, b2)
}

/// `x (+) delta` on the block's manifold. `free` lists the euclidean indices
/// the tangent vector maps to.
pub fn plus(manifold: Manifold, x: &[f64], delta: &[f64], free: &[usize]) -> Vec<f64> {
    match manifold {
        Manifold::Euclidean => {
            let mut out = x.to_vec();
            for (k, &i) in free.iter().enumerate() {
                out[i] += delta[k];
            }
            out
        }
        Manifold::UnitSphere => {
            let v = Vec3::new(x[0], x[1], x[2]);
            let (b1, b2) = sphere_basis(&v);
            let moved = (v + b1 * delta[0] + b2 * delta[1]).normalize();
            vec![moved.x, moved.y, moved.z]
        }
        Manifold::Rotation => {
            let r = mat3_from_slice(x);
            let update = Rotation3::new(Vector3::new(delta[0], delta[1], delta[2])).into_inner();
            mat3_to_vec(&(update * r))
        }
        Manifold::Se3 => {
            let mut out = plus(Manifold::Rotation, &x[..9], &delta[..3], &[]);
            out.extend((0..3).map(|i| x[9 + i] + delta[3 + i]));
            out
        }
    }
}

/// Jacobian of `x (+) delta` with respect to `delta` at `delta = 0`
/// (ambient x tangent).
pub fn plus_jacobian(manifold: Manifold, x: &[f64], free: &[usize]) -> DMatrix<f64> {
    match manifold {
        Manifold::Euclidean => {
            let mut j = DMatrix::zeros(x.len(), free.len());
            for (k, &i) in free.iter().enumerate() {
                j[(i, k)] = 1.0;
            }
            j
        }
        Manifold::UnitSphere => {
            let (b1, b2) = sphere_basis(&Vec3::new(x[0], x[1], x[2]));
            let mut j = DMatrix::zeros(3, 2);
            for r in 0..3 {
                j[(r, 0)] = b1[r];
                j[(r, 1)] = b2[r];
            }
            j
        }
        Manifold::Rotation => rotation_plus_jacobian(&mat3_from_slice(x)),
        Manifold::Se3 => {
            let mut j = DMatrix::zeros(12, 6);
            let jr = rotation_plus_jacobian(&mat3_from_slice(&x[..9]));
            j.view_mut((0, 0), (9, 3)).copy_from(&jr);
            for i in 0..3 {
                j[(9 + i, 3 + i)] = 1.0;
            }
            j
        }
    }
}

fn rotation_plus_jacobian(r: &Mat3) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(9, 3);
    for k in 0..3 {
        let d = skew(&Vec3::ith(k, 1.0)) * r;
        for row in 0..3 {
            for col in 0..3 {
                j[(row * 3 + col, k)] = d[(row, col)];
            }
        }
    }
    j
}
