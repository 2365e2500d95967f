//! Dense symmetric linear algebra: Cholesky with a jitter ladder and a
//! symmetric eigendecomposition. Everything operates on `ndarray` values.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Diagnostics of one regularized solve.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SolveReport {
    /// Diagonal shift that was actually added before factorization succeeded.
    pub jitter: f64,
    /// max-norm of K·x − rhs, measured against the unshifted matrix.
    pub residual: f64,
}

/// Lower-triangular Cholesky factor of a symmetric matrix, or None when a
/// pivot is non-positive or non-finite.
pub(crate) fn cholesky(a: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Some(l)
}

/// The escalating diagonal shifts tried before declaring a matrix singular,
/// relative to the mean diagonal.
const LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

fn mean_diagonal(a: ArrayView2<'_, f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|i| a[(i, i)]).sum::<f64>() / n as f64
}

/// Factor `a + jitter·I`, escalating jitter through the ladder until the
/// factorization succeeds. Returns the factor and the jitter used.
pub(crate) fn ladder_cholesky(
    a: ArrayView2<'_, f64>,
    op: &'static str,
) -> Result<(Array2<f64>, f64)> {
    let md = mean_diagonal(a);
    for rung in LADDER {
        let jitter = rung * md;
        let shifted = if jitter == 0.0 {
            a.to_owned()
        } else {
            let mut s = a.to_owned();
            for i in 0..s.nrows() {
                s[(i, i)] += jitter;
            }
            s
        };
        if let Some(l) = cholesky(shifted.view()) {
            return Ok((l, jitter));
        }
    }
    Err(Error::numerical(op, "numerically singular K_SS"))
}

fn forward_substitute(l: &Array2<f64>, rhs: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = l.nrows();
    let m = rhs.ncols();
    let mut y = rhs.to_owned();
    for c in 0..m {
        for i in 0..n {
            let mut s = y[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * y[(k, c)];
            }
            y[(i, c)] = s / l[(i, i)];
        }
    }
    y
}

fn back_substitute(l: &Array2<f64>, y: &mut Array2<f64>) {
    let n = l.nrows();
    let m = y.ncols();
    for c in 0..m {
        for i in (0..n).rev() {
            let mut s = y[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * y[(k, c)];
            }
            y[(i, c)] = s / l[(i, i)];
        }
    }
}

/// Solve `(a + jitter·I)·x = rhs` with the ladder, reporting the jitter used
/// and the residual of the unshifted system.
pub(crate) fn ladder_solve(
    a: ArrayView2<'_, f64>,
    rhs: ArrayView2<'_, f64>,
    op: &'static str,
) -> Result<(Array2<f64>, SolveReport)> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid(op, "matrix is not square"));
    }
    if a.nrows() != rhs.nrows() {
        return Err(Error::invalid(
            op,
            format!(
                "rhs has {} rows, expected {}",
                rhs.nrows(),
                a.nrows()
            ),
        ));
    }
    let (l, jitter) = ladder_cholesky(a, op)?;
    let mut x = forward_substitute(&l, rhs);
    back_substitute(&l, &mut x);
    let residual = {
        let r = a.dot(&x) - &rhs;
        r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    };
    Ok((x, SolveReport { jitter, residual }))
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations, eigenvalues
/// sorted descending with their eigenvectors as columns. Jacobi keeps the
/// eigenvector basis orthogonal to machine precision even when eigenvalues
/// cluster, which the spectral reconstruction invariant depends on.
pub(crate) fn symmetric_eigen(
    a: ArrayView2<'_, f64>,
    op: &'static str,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::invalid(op, "matrix is not square"));
    }
    let mut m = a.to_owned();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let mut vectors = Array2::<f64>::eye(n);
    if n <= 1 {
        let values = Array1::from_iter((0..n).map(|i| m[(i, i)]));
        return Ok((values, vectors));
    }
    let fro: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = n as f64 * f64::EPSILON * fro;
    let mut converged = fro == 0.0;
    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= tol {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                // The rotation annihilates this pair exactly in real
                // arithmetic; pin it to keep the off-norm honest.
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = vectors[(k, p)];
                    let vkq = vectors[(k, q)];
                    vectors[(k, p)] = c * vkp - s * vkq;
                    vectors[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::numerical(op, "eigensolver did not converge"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(j, j)]
            .partial_cmp(&m[(i, i)])
            .expect("eigenvalues are finite")
            .then(i.cmp(&j))
    });
    let values = Array1::from_iter(order.iter().map(|&i| m[(i, i)]));
    let mut sorted = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            sorted[(r, dst)] = vectors[(r, src)];
        }
    }
    Ok((values, sorted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn cholesky_reconstructs_spd_matrix() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let l = cholesky(a.view()).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(a.view()).is_none());
    }

    #[test]
    fn ladder_solves_exactly_singular_rank_one() {
        // Duplicate points under a linear kernel: K = [[1,1],[1,1]].
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let rhs = array![[1.0], [1.0]];
        let (x, report) = ladder_solve(a.view(), rhs.view(), "test").unwrap();
        assert!(report.jitter > 0.0);
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ladder_reports_zero_jitter_for_well_conditioned() {
        let a = array![[1.0, 0.5], [0.5, 1.0]];
        let rhs = array![[1.0, 0.0], [0.0, 1.0]];
        let (x, report) = ladder_solve(a.view(), rhs.view(), "test").unwrap();
        assert_eq!(report.jitter, 0.0);
        // Frozen closed-form inverse of [[1,.5],[.5,1]].
        assert_abs_diff_eq!(x[(0, 0)], 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[(0, 1)], -2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[(1, 0)], -2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[(1, 1)], 4.0 / 3.0, epsilon = 1e-12);
        assert!(report.residual < 1e-12);
    }

    #[test]
    fn ladder_gives_up_on_zero_matrix() {
        let a = Array2::<f64>::zeros((3, 3));
        let rhs = Array2::<f64>::eye(3);
        let err = ladder_solve(a.view(), rhs.view(), "stable_inverse_apply").unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("singular"));
    }

    #[test]
    fn eigen_handles_clustered_spectra_to_machine_precision() {
        // Near-identity with one weak coupling: eigenvalues 1 +- 5.5e-5, 1, 1.
        // Shift-based QR iterations tend to lose several digits of
        // orthogonality here; the decomposition must still reconstruct.
        let mut a = Array2::<f64>::eye(4);
        a[(1, 2)] = 5.5e-5;
        a[(2, 1)] = 5.5e-5;
        let (vals, vecs) = symmetric_eigen(a.view(), "test").unwrap();
        let mut rec = Array2::<f64>::zeros((4, 4));
        for k in 0..4 {
            for i in 0..4 {
                for j in 0..4 {
                    rec[(i, j)] += vals[k] * vecs[(i, k)] * vecs[(j, k)];
                }
            }
        }
        for (x, y) in rec.iter().zip(a.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
        let gram = vecs.t().dot(&vecs);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(gram[(i, j)], want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn eigen_sorted_descending_and_orthonormal() {
        let a = array![[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]];
        let (vals, vecs) = symmetric_eigen(a.view(), "test").unwrap();
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        // Known spectrum 2 + √2, 2, 2 − √2.
        assert_abs_diff_eq!(vals[0], 2.0 + std::f64::consts::SQRT_2, epsilon = 1e-10);
        assert_abs_diff_eq!(vals[1], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(vals[2], 2.0 - std::f64::consts::SQRT_2, epsilon = 1e-10);
        let gram = vecs.t().dot(&vecs);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(gram[(i, j)], want, epsilon = 1e-10);
            }
        }
        // Reconstruction.
        let mut rec = Array2::<f64>::zeros((3, 3));
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    rec[(i, j)] += vals[k] * vecs[(i, k)] * vecs[(j, k)];
                }
            }
        }
        for (x, y) in rec.iter().zip(a.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
    }
}
