//! Small fixed-size decompositions: a symmetric 4x4 eigen solver used for
//! quaternion averaging and a 3x3 SVD used for keypoint alignment.

use nalgebra::{Matrix3, Vector3};

const MAX_SWEEPS: usize = 30;
const OFF_DIAGONAL_TOL: f64 = 1e-14;

/// Eigen-decomposition of a symmetric 4x4 matrix, eigenvalues descending.
#[derive(Debug, Clone, Copy)]
pub struct SymEigen4 {
    pub values: [f64; 4],
    /// `vectors[k]` is the unit eigenvector for `values[k]`.
    pub vectors: [[f64; 4]; 4],
}

fn off_diagonal_norm(a: &[[f64; 4]; 4]) -> f64 {
    let mut s = 0.0;
    for p in 0..4 {
        for q in p + 1..4 {
            s += 2.0 * a[p][q] * a[p][q];
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi. Stops once the off-diagonal Frobenius norm drops below
/// `1e-14` relative to the matrix norm, or after 30 sweeps.
pub fn sym_eigen4(m: &[[f64; 4]; 4]) -> SymEigen4 {
    let mut a = *m;
    let mut v = [[0.0; 4]; 4];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) < OFF_DIAGONAL_TOL * scale {
            break;
        }
        for p in 0..3 {
            for q in p + 1..4 {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    SymEigen4 {
        values: order.map(|k| a[k][k]),
        vectors: order.map(|k| [v[0][k], v[1][k], v[2][k], v[3][k]]),
    }
}

/// `m = u * diag(sigma) * v^T`, singular values descending.
#[derive(Debug, Clone, Copy)]
pub struct Svd3 {
    pub u: Matrix3<f64>,
    pub sigma: [f64; 3],
    pub v: Matrix3<f64>,
}

fn any_perpendicular(a: &Vector3<f64>) -> Vector3<f64> {
    let axis = if a.x.abs() <= a.y.abs() && a.x.abs() <= a.z.abs() {
        Vector3::x()
    } else if a.y.abs() <= a.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    a.cross(&axis).normalize()
}

/// One-sided (Hestenes) Jacobi SVD. Column pairs are rotated until
/// mutually orthogonal to working precision, so small singular values keep
/// their relative accuracy; `u` is completed when `m` is rank deficient.
pub fn svd3(m: &Matrix3<f64>) -> Svd3 {
    let mut a = *m;
    let mut v = Matrix3::identity();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let alpha = a.column(p).norm_squared();
            let beta = a.column(q).norm_squared();
            let gamma = a.column(p).dot(&a.column(q));
            if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for mat in [&mut a, &mut v] {
                let (cp, cq) = (mat.column(p).into_owned(), mat.column(q).into_owned());
                mat.set_column(p, &(cp * c - cq * s));
                mat.set_column(q, &(cp * s + cq * c));
            }
        }
        if !rotated {
            break;
        }
    }

    let norms = [a.column(0).norm(), a.column(1).norm(), a.column(2).norm()];
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let sigma = order.map(|k| norms[k]);
    let v = Matrix3::from_columns(&order.map(|k| v.column(k).into_owned()));
    let cols = order.map(|k| a.column(k).into_owned());

    let u0 = if sigma[0] > 0.0 { cols[0] / sigma[0] } else { Vector3::x() };
    let u1 = if sigma[1] > 0.0 { cols[1] / sigma[1] } else { any_perpendicular(&u0) };
    let mut u2 = u0.cross(&u1);
    if u2.dot(&cols[2]) < 0.0 {
        u2 = -u2;
    }
    Svd3 {
        u: Matrix3::from_columns(&[u0, u1, u2]),
        sigma,
        v,
    }
}
