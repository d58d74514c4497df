//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Everything here works on `DMatrix<f64>`/`DMatrix<Complex64>` and is sized for the
//! models this crate targets (tens of states), so clarity wins over blocking.

use alloc::vec::Vec;

use nalgebra::{ComplexField, DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// 2-norm condition number; `inf` for a numerically rank-deficient matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

pub fn complex_condition_number(m: &DMatrix<Complex64>) -> f64 {
    let s = m.clone().svd(false, false).singular_values;
    let hi = s.iter().copied().fold(0.0, f64::max);
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

pub fn inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().lu().try_inverse()
}

pub fn solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    m.clone().lu().solve(rhs)
}

/// Eigenvalues of a real square matrix via the real Schur form.
///
/// Complex eigenvalues come out as exact conjugate pairs.
pub fn eigenvalues(a: &DMatrix<f64>) -> Option<Vec<Complex64>> {
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 0)?;
    Some(schur.complex_eigenvalues().iter().copied().collect())
}

/// Orthonormal basis (as columns) of the `k` smallest right singular vectors of `m`,
/// together with the full singular spectrum sorted ascending.
pub fn smallest_right_singular_vectors<T>(m: &DMatrix<T>, k: usize) -> (DMatrix<T>, Vec<f64>)
where
    T: ComplexField<RealField = f64>,
{
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let mut basis = DMatrix::zeros(n, k);
    for (col, &row) in order.iter().take(k).enumerate() {
        for r in 0..n {
            basis[(r, col)] = v_t[(row, r)].clone().conjugate();
        }
    }
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    (basis, sigma)
}

/// Solves `A X - X B = C` for real `A` (p x p), `B` (q x q), `C` (p x q).
///
/// Bartels-Stewart on the complex Schur forms `A = U T1 U*`, `B = W T2 W*`: the
/// transformed system `T1 Y - Y T2 = U* C W` is solved column by column with
/// triangular back substitution. `separation_floor` is the minimum allowed
/// `|lambda_i(A) - mu_j(B)|` before the problem is declared ill-posed.
pub fn solve_sylvester(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    separation_floor: f64,
) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    let q = b.nrows();
    if c.nrows() != p || c.ncols() != q {
        return Err(Error::Dimension {
            what: "Sylvester right-hand side",
            expected: p * q,
            got: c.len(),
        });
    }
    let (u, t1) = Schur::try_new(complexify(a), f64::EPSILON, 0)
        .ok_or(Error::EigenSolverFailed)?
        .unpack();
    let (w, t2) = Schur::try_new(complexify(b), f64::EPSILON, 0)
        .ok_or(Error::EigenSolverFailed)?
        .unpack();

    let c_t = u.adjoint() * complexify(c) * &w;
    let mut y = DMatrix::<Complex64>::zeros(p, q);
    for j in 0..q {
        let mu = t2[(j, j)];
        let mut rhs: Vec<Complex64> = (0..p).map(|i| c_t[(i, j)]).collect();
        for k in 0..j {
            let coeff = t2[(k, j)];
            if coeff != Complex64::new(0.0, 0.0) {
                for (i, r) in rhs.iter_mut().enumerate() {
                    *r += y[(i, k)] * coeff;
                }
            }
        }
        // (T1 - mu I) y_j = rhs, T1 upper triangular.
        for i in (0..p).rev() {
            let mut acc = rhs[i];
            for k in i + 1..p {
                acc -= t1[(i, k)] * y[(k, j)];
            }
            let diag = t1[(i, i)] - mu;
            if diag.norm() < separation_floor {
                return Err(Error::CommonEigenvalue {
                    slow: t1[(i, i)],
                    fast: mu,
                });
            }
            y[(i, j)] = acc / diag;
        }
    }
    let x = &u * y * w.adjoint();
    Ok(x.map(|v| v.re))
}

/// `out = m * x` on raw slices; `m` is column-major as stored by nalgebra.
pub fn mat_vec_into(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.ncols(), x.len());
    debug_assert_eq!(m.nrows(), out.len());
    out.iter_mut().for_each(|o| *o = 0.0);
    mat_vec_acc(m, x, out, 1.0);
}

/// `out += alpha * m * x`.
pub fn mat_vec_acc(m: &DMatrix<f64>, x: &[f64], out: &mut [f64], alpha: f64) {
    let rows = m.nrows();
    let data = m.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        let s = alpha * xj;
        if s == 0.0 {
            continue;
        }
        let col = &data[j * rows..(j + 1) * rows];
        for (o, &mij) in out.iter_mut().zip(col) {
            *o += mij * s;
        }
    }
}
