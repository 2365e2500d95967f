//! Kernel families, Gram-matrix construction with numerical safeguards, and
//! the empirical spectral decomposition of the induced integral operator.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::{self, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    Linear,
    Rbf { gamma: f64 },
    Cosine,
    Polynomial { degree: u32, coef0: f64 },
}

/// A kernel family together with a positive multiplicative scale c, so that
/// k(x,y) = c·k_base(x,y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub scale: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, scale: f64) -> Result<Self> {
        const OP: &str = "KernelSpec::new";
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::invalid(OP, "scale must be positive"));
        }
        match family {
            KernelFamily::Rbf { gamma } if !(gamma > 0.0) || !gamma.is_finite() => {
                return Err(Error::invalid(OP, "gamma must be positive"));
            }
            KernelFamily::Polynomial { degree, coef0 } => {
                if degree < 1 {
                    return Err(Error::invalid(OP, "degree must be at least 1"));
                }
                if !(coef0 >= 0.0) || !coef0.is_finite() {
                    return Err(Error::invalid(OP, "coef0 must be nonnegative"));
                }
            }
            _ => {}
        }
        Ok(KernelSpec { family, scale })
    }

    pub fn linear() -> Self {
        KernelSpec {
            family: KernelFamily::Linear,
            scale: 1.0,
        }
    }

    pub fn rbf(gamma: f64) -> Result<Self> {
        KernelSpec::new(KernelFamily::Rbf { gamma }, 1.0)
    }

    /// Multiply the scale by c. The Gram matrix of the rescaled spec equals
    /// c times the original Gram matrix.
    pub fn rescale(&self, c: f64) -> Result<KernelSpec> {
        const OP: &str = "rescale";
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::invalid(OP, "scale factor must be positive"));
        }
        KernelSpec::new(self.family, self.scale * c)
    }
}

/// Default rbf bandwidth 1/(d·variance), with the variance averaged over
/// feature coordinates under the empirical measure.
pub fn default_rbf_gamma(features: ArrayView2<'_, f64>) -> Result<f64> {
    const OP: &str = "default_rbf_gamma";
    let n = features.nrows() as f64;
    let d = features.ncols();
    let mut var = 0.0;
    for col in features.columns() {
        let mean = col.sum() / n;
        var += col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    }
    var /= d as f64;
    if !(var > 0.0) {
        return Err(Error::invalid(OP, "features have zero variance"));
    }
    Ok(1.0 / (d as f64 * var))
}

fn base_entry(family: KernelFamily, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    const OP: &str = "gram";
    let v = match family {
        KernelFamily::Linear => a.dot(&b),
        KernelFamily::Rbf { gamma } => {
            let d2: f64 = a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            (-gamma * d2).exp()
        }
        KernelFamily::Cosine => {
            let na = a.dot(&a).sqrt();
            let nb = b.dot(&b).sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::invalid(OP, "cosine kernel on zero vector"));
            }
            a.dot(&b) / (na * nb)
        }
        KernelFamily::Polynomial { degree, coef0 } => (a.dot(&b) + coef0).powi(degree as i32),
    };
    Ok(v)
}

/// A kernel matrix block. Square blocks are symmetric and carry the smallest
/// diagonal shift at which their Cholesky factorization succeeded; nothing
/// is added to the stored values.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: Array2<f64>,
    jitter: f64,
}

impl GramMatrix {
    /// Wrap a precomputed kernel block. Square inputs must be symmetric
    /// within 1e−10 and positive semidefinite up to the jitter ladder.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        const OP: &str = "GramMatrix::from_values";
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::invalid(OP, "empty matrix"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(OP, "non-finite entry"));
        }
        if values.nrows() != values.ncols() {
            return Ok(GramMatrix { values, jitter: 0.0 });
        }
        let n = values.nrows();
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (values[(i, j)] - values[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::invalid(OP, "matrix is not symmetric"));
                }
            }
        }
        let mut sym = values;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (sym[(i, j)] + sym[(j, i)]);
                sym[(i, j)] = v;
                sym[(j, i)] = v;
            }
        }
        let (_, jitter) = linalg::ladder_cholesky(sym.view(), OP)?;
        Ok(GramMatrix { values: sym, jitter })
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    /// Smallest ladder shift at which factorization succeeded when this
    /// block was validated (0 for cross blocks).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.nrows() == self.ncols()
    }

    pub fn mean_diagonal(&self) -> f64 {
        let n = self.nrows().min(self.ncols());
        (0..n).map(|i| self.values[(i, i)]).sum::<f64>() / n as f64
    }
}

/// Square kernel matrix over one set of points. Entries are computed once
/// per unordered pair, so the result is exactly symmetric.
pub fn gram(spec: &KernelSpec, points: ArrayView2<'_, f64>) -> Result<GramMatrix> {
    let n = points.nrows();
    let mut k = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = spec.scale * base_entry(spec.family, points.row(i), points.row(j))?;
            if !v.is_finite() {
                return Err(Error::numerical("gram", "non-finite entry"));
            }
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    GramMatrix::from_values(k)
}

/// Rectangular kernel block between two sets of points.
pub fn gram_cross(
    spec: &KernelSpec,
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
) -> Result<GramMatrix> {
    const OP: &str = "gram";
    if a.ncols() != b.ncols() {
        return Err(Error::invalid(OP, "dimension mismatch"));
    }
    let mut k = Array2::<f64>::zeros((a.nrows(), b.nrows()));
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            let v = spec.scale * base_entry(spec.family, a.row(i), b.row(j))?;
            if !v.is_finite() {
                return Err(Error::numerical(OP, "non-finite entry"));
            }
            k[(i, j)] = v;
        }
    }
    GramMatrix::from_values(k)
}

/// Solve K·x = rhs through the escalating jitter ladder, reporting the shift
/// used and the residual against the unshifted matrix.
pub fn stable_inverse_apply(
    k: &GramMatrix,
    rhs: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, SolveReport)> {
    const OP: &str = "stable_inverse_apply";
    if !k.is_square() {
        return Err(Error::invalid(OP, "matrix is not square"));
    }
    linalg::ladder_solve(k.values(), rhs, OP)
}

/// Diagonal of K^{-1}, computed through the same ladder.
pub fn inverse_diagonal(k: &GramMatrix) -> Result<Array1<f64>> {
    const OP: &str = "inverse_diagonal";
    if !k.is_square() {
        return Err(Error::invalid(OP, "matrix is not square"));
    }
    let n = k.nrows();
    let eye = Array2::<f64>::eye(n);
    let (inv, _) = linalg::ladder_solve(k.values(), eye.view(), OP)?;
    Ok(Array1::from_iter((0..n).map(|i| inv[(i, i)])))
}

/// Empirical Mercer eigensystem of K/N: eigenvalues λ̂ descending and
/// eigenfunction values φ_i = √N·u_i, orthonormal under the empirical
/// inner product ⟨f,g⟩ = (1/N)Σ_x f(x)g(x).
#[derive(Debug, Clone)]
pub struct SpectralModel {
    eigenvalues: Array1<f64>,
    eigenfunctions: Array2<f64>,
}

impl SpectralModel {
    pub fn eigenvalues(&self) -> ArrayView1<'_, f64> {
        self.eigenvalues.view()
    }

    /// N×r matrix of eigenfunction values at the data points.
    pub fn eigenfunctions(&self) -> ArrayView2<'_, f64> {
        self.eigenfunctions.view()
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Σ λ̂_i, the empirical trace of the kernel operator.
    pub fn trace(&self) -> f64 {
        self.eigenvalues.sum()
    }
}

/// Eigendecompose a full N×N Gram matrix into the empirical Mercer system,
/// keeping components with λ̂_i > tol·λ̂_1 (and λ̂_i > 0).
pub fn spectral_model(k: &GramMatrix, tol: f64) -> Result<SpectralModel> {
    const OP: &str = "spectral_model";
    if !k.is_square() {
        return Err(Error::invalid(OP, "matrix is not square"));
    }
    if !(tol >= 0.0) {
        return Err(Error::invalid(OP, "tol must be nonnegative"));
    }
    let n = k.nrows();
    let (raw, vecs) = linalg::symmetric_eigen(k.values(), OP)?;
    let lambda_hat: Vec<f64> = raw.iter().map(|v| v / n as f64).collect();
    let lead = lambda_hat.first().copied().unwrap_or(0.0);
    let cutoff = tol * lead;
    let keep: Vec<usize> = (0..n)
        .filter(|&i| lambda_hat[i] > 0.0 && lambda_hat[i] > cutoff)
        .collect();
    let r = keep.len();
    let sqrt_n = (n as f64).sqrt();
    let mut funcs = Array2::<f64>::zeros((n, r));
    let mut vals = Array1::<f64>::zeros(r);
    for (dst, &src) in keep.iter().enumerate() {
        vals[dst] = lambda_hat[src];
        for row in 0..n {
            funcs[(row, dst)] = sqrt_n * vecs[(row, src)];
        }
    }
    Ok(SpectralModel {
        eigenvalues: vals,
        eigenfunctions: funcs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn linear_gram_is_outer_product() {
        let pts = array![[1.0], [2.0], [3.0]];
        let k = gram(&KernelSpec::linear(), pts.view()).unwrap();
        let want = array![[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [3.0, 6.0, 9.0]];
        assert_eq!(k.values(), want.view());
    }

    #[test]
    fn rbf_gram_two_points() {
        let pts = array![[0.0], [1.0]];
        let k = gram(&KernelSpec::rbf(1.0).unwrap(), pts.view()).unwrap();
        assert_eq!(k.values()[(0, 0)], 1.0);
        assert_eq!(k.values()[(1, 1)], 1.0);
        // e^{-1}, frozen.
        assert_abs_diff_eq!(k.values()[(0, 1)], 0.36787944117144233, epsilon = 1e-16);
    }

    #[test]
    fn cosine_self_similarity_is_one() {
        let pts = array![[3.0, 4.0], [-1.0, 2.0]];
        let spec = KernelSpec::new(KernelFamily::Cosine, 1.0).unwrap();
        let k = gram(&spec, pts.view()).unwrap();
        assert_abs_diff_eq!(k.values()[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(k.values()[(1, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        let pts = array![[0.0, 0.0], [1.0, 0.0]];
        let spec = KernelSpec::new(KernelFamily::Cosine, 1.0).unwrap();
        assert!(gram(&spec, pts.view()).is_err());
    }

    #[test]
    fn rescale_homogeneity_is_exact() {
        let pts = array![[1.0], [2.0]];
        let spec = KernelSpec::linear();
        let k1 = gram(&spec, pts.view()).unwrap();
        let k2 = gram(&spec.rescale(2.0).unwrap(), pts.view()).unwrap();
        for (a, b) in k1.values().iter().zip(k2.values().iter()) {
            assert_eq!(2.0 * a, *b);
        }
        let identity = spec.rescale(1.0).unwrap();
        assert_eq!(identity, spec);
        let half = spec.rescale(2.0).unwrap().rescale(0.25).unwrap();
        assert_eq!(half.scale, 0.5);
    }

    #[test]
    fn stable_inverse_apply_identity_and_closed_form() {
        let k = GramMatrix::from_values(Array2::eye(3)).unwrap();
        let rhs = array![[1.0], [2.0], [3.0]];
        let (x, rep) = stable_inverse_apply(&k, rhs.view()).unwrap();
        assert_eq!(x, rhs);
        assert_eq!(rep.jitter, 0.0);

        let k = GramMatrix::from_values(array![[1.0, 0.5], [0.5, 1.0]]).unwrap();
        let (inv, _) = stable_inverse_apply(&k, Array2::eye(2).view()).unwrap();
        assert_abs_diff_eq!(inv[(0, 0)], 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(inv[(0, 1)], -2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn duplicate_points_force_jitter() {
        let pts = array![[1.0, 2.0], [1.0, 2.0]];
        let k = gram(&KernelSpec::linear(), pts.view()).unwrap();
        assert!(k.jitter() > 0.0);
        let rhs = array![[1.0], [1.0]];
        let (_, rep) = stable_inverse_apply(&k, rhs.view()).unwrap();
        assert!(rep.jitter > 0.0);
    }

    #[test]
    fn inverse_diagonal_examples() {
        let k = GramMatrix::from_values(Array2::eye(4)).unwrap();
        assert_eq!(inverse_diagonal(&k).unwrap(), Array1::from_elem(4, 1.0));

        let k = GramMatrix::from_values(array![[1.0, 0.5], [0.5, 1.0]]).unwrap();
        let d = inverse_diagonal(&k).unwrap();
        assert_abs_diff_eq!(d[0], 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d[1], 4.0 / 3.0, epsilon = 1e-12);

        let k = GramMatrix::from_values(array![[2.0, 0.0], [0.0, 4.0]]).unwrap();
        let d = inverse_diagonal(&k).unwrap();
        assert_abs_diff_eq!(d[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(d[1], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn spectral_model_scaled_identity() {
        let n = 5;
        let k = GramMatrix::from_values(Array2::eye(n) * n as f64).unwrap();
        let model = spectral_model(&k, 0.0).unwrap();
        assert_eq!(model.rank(), n);
        for &v in model.eigenvalues() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
        // Empirical orthonormality: (1/N)Φ^T Φ = I.
        let g = model.eigenfunctions().t().dot(&model.eigenfunctions()) / n as f64;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(g[(i, j)], want, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn spectral_model_rank_one_linear() {
        let pts = array![[1.0], [2.0], [3.0]];
        let k = gram(&KernelSpec::linear(), pts.view()).unwrap();
        let model = spectral_model(&k, 1e-9).unwrap();
        assert_eq!(model.rank(), 1);
        // trace([[1,2,3],[2,4,6],[3,6,9]])/3 = 14/3, frozen.
        assert_abs_diff_eq!(model.eigenvalues()[0], 4.666666666666667, epsilon = 1e-12);
    }

    #[test]
    fn spectral_trace_matches_mean_diagonal_for_rbf() {
        let pts = array![[0.0], [0.7], [1.9], [3.2]];
        let k = gram(&KernelSpec::rbf(0.8).unwrap(), pts.view()).unwrap();
        let model = spectral_model(&k, 0.0).unwrap();
        assert_abs_diff_eq!(model.trace(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn spectral_reconstruction_at_tol_zero() {
        let pts = array![[0.1, 1.0], [0.9, -0.3], [2.0, 0.4], [-1.1, 0.8]];
        let k = gram(&KernelSpec::rbf(0.5).unwrap(), pts.view()).unwrap();
        let n = k.nrows() as f64;
        let model = spectral_model(&k, 0.0).unwrap();
        let phi = model.eigenfunctions().to_owned() / n.sqrt();
        let mut rec = Array2::<f64>::zeros((4, 4));
        for t in 0..model.rank() {
            for i in 0..4 {
                for j in 0..4 {
                    rec[(i, j)] += model.eigenvalues()[t] * phi[(i, t)] * phi[(j, t)];
                }
            }
        }
        let kn = k.values().to_owned() / n;
        let num = (&rec - &kn).iter().map(|v| v * v).sum::<f64>().sqrt();
        let den = kn.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den <= 1e-6);
    }

    #[test]
    fn from_values_rejects_asymmetry_and_indefinite() {
        assert!(GramMatrix::from_values(array![[1.0, 0.2], [0.5, 1.0]]).is_err());
        let err = GramMatrix::from_values(array![[1.0, 2.0], [2.0, 1.0]]).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn default_gamma_inverse_of_dim_times_variance() {
        let x = array![[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]];
        // Per-coordinate population variance 1.0, d = 2.
        assert_abs_diff_eq!(default_rbf_gamma(x.view()).unwrap(), 0.5, epsilon = 1e-14);
        let constant = array![[1.0], [1.0]];
        assert!(default_rbf_gamma(constant.view()).is_err());
    }
}
