//! Dense symmetric linear algebra used throughout the crate.
//!
//! The matrices in this problem domain are small (hundreds to a couple of
//! thousand rows), so the factorizations here are plain textbook routines:
//! Cholesky for symmetric positive definite solves, cyclic Jacobi for
//! symmetric eigendecompositions, and partially pivoted Gaussian elimination
//! for the small variance-component systems. Matrix products go through
//! `ndarray::dot`, which dispatches to an optimized kernel.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Relative eigenvalue floor used by the pseudo-solve fallback.
pub const PSEUDO_SOLVE_FLOOR: f64 = 1e-10;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
///
/// Returns `None` when a pivot is non-positive or non-finite, i.e. the matrix
/// is not numerically positive definite.
pub fn cholesky(a: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solves L Lᵀ x = b given the lower Cholesky factor.
pub fn cholesky_solve(l: &Array2<f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    // Forward substitution: L z = b.
    let mut z = b.to_owned();
    for i in 0..n {
        let mut sum = z[i];
        for k in 0..i {
            sum -= l[[i, k]] * z[k];
        }
        z[i] = sum / l[[i, i]];
    }
    // Back substitution: Lᵀ x = z.
    for i in (0..n).rev() {
        let mut sum = z[i];
        for k in (i + 1)..n {
            sum -= l[[k, i]] * z[k];
        }
        z[i] = sum / l[[i, i]];
    }
    z
}

/// Inverse of a symmetric positive definite matrix from its Cholesky factor.
pub fn cholesky_inverse(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut unit = Array1::<f64>::zeros(n);
    for j in 0..n {
        unit.fill(0.0);
        unit[j] = 1.0;
        let col = cholesky_solve(l, unit.view());
        inv.column_mut(j).assign(&col);
    }
    // The column-wise solves agree only to rounding; enforce exact symmetry.
    symmetrize(&mut inv);
    inv
}

/// Symmetric eigendecomposition by the cyclic Jacobi method.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// columns of an orthogonal matrix, so `A = V diag(w) Vᵀ`.
pub fn sym_eigen(a: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "eigendecomposition input has non-finite entries".into(),
        ));
    }
    let mut m = a.to_owned();
    symmetrize(&mut m);
    let mut v = Array2::<f64>::eye(n);
    if n <= 1 {
        let w = Array1::from_iter((0..n).map(|i| m[[i, i]]));
        return Ok((w, v));
    }

    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    let tol = 1e-15 * scale;
    const MAX_SWEEPS: usize = 64;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                // Rotation angle from the standard Jacobi formulas.
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap());
    let w = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vecs = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vecs.column_mut(dst).assign(&v.column(src));
    }
    Ok((w, vecs))
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub fn eigen_range(a: ArrayView2<'_, f64>) -> Result<(f64, f64)> {
    let (w, _) = sym_eigen(a)?;
    Ok((w[0], w[w.len() - 1]))
}

/// Solves A x = b for symmetric positive semidefinite A.
///
/// Tries a Cholesky factorization first; when that fails the solve falls back
/// to an eigendecomposition with eigenvalues floored at
/// `PSEUDO_SOLVE_FLOOR * max(λ_max, 1)`.
pub fn solve_spd(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "solve: matrix is {}x{} but rhs has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if let Some(l) = cholesky(a) {
        let x = cholesky_solve(&l, b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let (w, v) = sym_eigen(a)?;
    let lam_max = w.iter().fold(0.0f64, |acc, &x| acc.max(x));
    let floor = PSEUDO_SOLVE_FLOOR * lam_max.max(1.0);
    let vt_b = v.t().dot(&b);
    let scaled = Array1::from_iter(vt_b.iter().zip(w.iter()).map(|(&c, &lam)| c / lam.max(floor)));
    let x = v.dot(&scaled);
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Numeric("pseudo-solve produced non-finite values".into()))
    }
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
pub fn solve_dense(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Dimension(format!(
            "solve: matrix is {}x{} but rhs has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let mut m = a.to_owned();
    let mut x = b.to_owned();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = m[[col, col]].abs();
        for r in (col + 1)..n {
            if m[[r, col]].abs() > pivot_val {
                pivot_val = m[[r, col]].abs();
                pivot_row = r;
            }
        }
        if pivot_val <= 1e-12 * scale {
            return Err(Error::Numeric(format!(
                "singular system: pivot {} at column {} below threshold",
                pivot_val, col
            )));
        }
        if pivot_row != col {
            for k in 0..n {
                m.swap([col, k], [pivot_row, k]);
            }
            x.swap(col, pivot_row);
        }
        for r in (col + 1)..n {
            let factor = m[[r, col]] / m[[col, col]];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                m[[r, k]] -= factor * m[[col, k]];
            }
            x[r] -= factor * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut sum = x[i];
        for k in (i + 1)..n {
            sum -= m[[i, k]] * x[k];
        }
        x[i] = sum / m[[i, i]];
    }
    Ok(x)
}

/// Replaces A by (A + Aᵀ)/2, making it bitwise symmetric.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let mean = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = mean;
            a[[j, i]] = mean;
        }
    }
}

/// Condition number of a symmetric matrix, |λ|max / |λ|min.
pub fn sym_condition_number(a: ArrayView2<'_, f64>) -> Result<f64> {
    let (w, _) = sym_eigen(a)?;
    let max = w.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
    let min = w.iter().fold(f64::INFINITY, |acc, &x| acc.min(x.abs()));
    if min == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(max / min)
    }
}
