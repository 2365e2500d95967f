//! The approximation-theoretic core: pointwise power function, Schur-trace
//! objectives, the projection estimator built from labels at selected
//! points, the spectral residual of a conditional distribution, and the
//! assembled generalization bound.

use ndarray::{Array1, Array2, ArrayView2};
use serde::Serialize;

use crate::data::{ConditionalDistribution, SelectionMask};
use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, SpectralModel};
use crate::linalg;

/// Per-point power-function values for one selection. Values at selected
/// points are exactly 0; negative radicands from floating-point cancellation
/// are clamped to 0 and counted.
#[derive(Debug, Clone, Serialize)]
pub struct PowerProfile {
    pub values: Vec<f64>,
    pub clamped_count: usize,
}

fn require_square(k: &GramMatrix, op: &'static str) -> Result<usize> {
    if !k.is_square() {
        return Err(Error::invalid(op, "full Gram matrix must be square"));
    }
    Ok(k.nrows())
}

fn require_mask(mask: &SelectionMask, n: usize, op: &'static str) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::invalid(op, "selection is empty"));
    }
    if let Some(&last) = mask.selected().last() {
        if last >= n {
            return Err(Error::invalid(op, format!("index {last} out of range")));
        }
    }
    Ok(())
}

/// K_SS block and the full m×N cross block K_S,all for a selection.
fn selected_blocks(k: &GramMatrix, sel: &[usize]) -> (Array2<f64>, Array2<f64>) {
    let n = k.nrows();
    let m = sel.len();
    let v = k.values();
    let mut kss = Array2::<f64>::zeros((m, m));
    let mut ksa = Array2::<f64>::zeros((m, n));
    for (a, &i) in sel.iter().enumerate() {
        for (b, &j) in sel.iter().enumerate() {
            kss[(a, b)] = v[(i, j)];
        }
        for j in 0..n {
            ksa[(a, j)] = v[(i, j)];
        }
    }
    (kss, ksa)
}

/// |P(x)| = √(k(x,x) − K_xS K_SS^{-1} K_Sx) at every dataset point.
pub fn power_profile(k_full: &GramMatrix, mask: &SelectionMask) -> Result<PowerProfile> {
    const OP: &str = "power_profile";
    let n = require_square(k_full, OP)?;
    require_mask(mask, n, OP)?;
    let sel = mask.selected();
    let (kss, ksa) = selected_blocks(k_full, sel);
    let (w, _) = linalg::ladder_solve(kss.view(), ksa.view(), OP)?;
    let ind = mask.indicator(n);
    let v = k_full.values();
    let mut values = vec![0.0; n];
    let mut clamped = 0usize;
    for x in 0..n {
        if ind[x] {
            continue;
        }
        let mut r = v[(x, x)];
        for (a, &s) in sel.iter().enumerate() {
            r -= v[(x, s)] * w[(a, x)];
        }
        if r < 0.0 {
            clamped += 1;
            r = 0.0;
        }
        values[x] = r.sqrt();
    }
    Ok(PowerProfile {
        values,
        clamped_count: clamped,
    })
}

/// Trace(K_VV − K_VS (K_SS + ridge·I)^{-1} K_SV) over the unlabelled block;
/// at ridge = 0 this is the trace of the Schur complement K/K_SS.
pub fn ted_objective(k_full: &GramMatrix, mask: &SelectionMask, ridge: f64) -> Result<f64> {
    const OP: &str = "ted_objective";
    let n = require_square(k_full, OP)?;
    require_mask(mask, n, OP)?;
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::invalid(OP, "ridge must be nonnegative"));
    }
    if mask.len() == n {
        return Ok(0.0);
    }
    let sel = mask.selected();
    let (mut kss, ksa) = selected_blocks(k_full, sel);
    for i in 0..sel.len() {
        kss[(i, i)] += ridge;
    }
    let (w, _) = linalg::ladder_solve(kss.view(), ksa.view(), OP)?;
    let ind = mask.indicator(n);
    let v = k_full.values();
    let mut trace = 0.0;
    for u in 0..n {
        if ind[u] {
            continue;
        }
        let mut r = v[(u, u)];
        for (a, &s) in sel.iter().enumerate() {
            r -= v[(u, s)] * w[(a, u)];
        }
        trace += r;
    }
    Ok(trace)
}

/// Trace of the element-wise square root of the Schur complement: the sum of
/// power-function values over unlabelled points.
pub fn ted_half(k_full: &GramMatrix, mask: &SelectionMask) -> Result<f64> {
    let profile = power_profile(k_full, mask)?;
    Ok(profile.values.iter().sum())
}

/// Column c is K_{·S} K_SS^{-1} y_c where y_c is the 0/1 indicator of class
/// c at the selected points. Rows are raw projections and may leave the
/// simplex; clamp or renormalize only for classification, never for bound
/// evaluation.
pub fn projection_estimate(
    k_full: &GramMatrix,
    mask: &SelectionMask,
    labels_at_s: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    const OP: &str = "projection_estimate";
    let n = require_square(k_full, OP)?;
    require_mask(mask, n, OP)?;
    let m = mask.len();
    if labels_at_s.nrows() != m {
        return Err(Error::invalid(
            OP,
            format!("{} label rows for {} selected points", labels_at_s.nrows(), m),
        ));
    }
    for row in labels_at_s.rows() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        if ones != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid(OP, "label rows must be one-hot"));
        }
    }
    let sel = mask.selected();
    let (kss, _) = selected_blocks(k_full, sel);
    let (w, _) = linalg::ladder_solve(kss.view(), labels_at_s, OP)?;
    let v = k_full.values();
    let c = labels_at_s.ncols();
    let mut est = Array2::<f64>::zeros((n, c));
    for x in 0..n {
        for cc in 0..c {
            let mut acc = 0.0;
            for (a, &s) in sel.iter().enumerate() {
                acc += v[(x, s)] * w[(a, cc)];
            }
            est[(x, cc)] = acc;
        }
    }
    Ok(est)
}

/// Empirical inner products of one class column against each kept
/// eigenfunction, plus the residual (null-space) mass.
fn class_coefficients(
    spectrum: &SpectralModel,
    p: &ConditionalDistribution,
    class_index: usize,
) -> (Array1<f64>, f64) {
    let n = p.n();
    let r = spectrum.rank();
    let probs = p.probs();
    let phi = spectrum.eigenfunctions();
    let mut a = Array1::<f64>::zeros(r);
    for i in 0..r {
        let mut acc = 0.0;
        for x in 0..n {
            acc += probs[(x, class_index)] * phi[(x, i)];
        }
        a[i] = acc / n as f64;
    }
    let pnorm2 = probs
        .column(class_index)
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        / n as f64;
    let captured = a.iter().map(|v| v * v).sum::<f64>();
    let null_mass = (pnorm2 - captured).max(0.0);
    (a, null_mass)
}

/// Spectral residual of one class's conditional function:
/// √(Σ_i a_i²(1−λ̂_i)² + null mass), with the null mass obtained as the
/// Parseval energy deficit clamped at zero.
pub fn eps_h(
    spectrum: &SpectralModel,
    p: &ConditionalDistribution,
    class_index: usize,
) -> Result<f64> {
    const OP: &str = "eps_h";
    if class_index >= p.class_count() {
        return Err(Error::invalid(OP, "class index out of range"));
    }
    if spectrum.eigenfunctions().nrows() != p.n() {
        return Err(Error::invalid(OP, "spectrum and distribution sizes differ"));
    }
    let (a, null_mass) = class_coefficients(spectrum, p, class_index);
    let lam = spectrum.eigenvalues();
    let mut s = null_mass;
    for (i, ai) in a.iter().enumerate() {
        let gap = 1.0 - lam[i];
        s += ai * ai * gap * gap;
    }
    Ok(s.sqrt())
}

/// All components of the selection-quality bound on the conditional
/// total variation of the projection estimator.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub ted_half: f64,
    pub trace_k: f64,
    pub eps_h_per_class: Vec<f64>,
    pub first_term: f64,
    pub total: f64,
    /// Alternative form with the RKHS norms of the class conditionals;
    /// present only when every class has negligible null-space mass.
    pub rkhs_variant: Option<f64>,
    pub clamped_count: usize,
}

/// Assemble the bound: ted_half/(2N)·√Tr + half the summed per-class
/// spectral residuals.
pub fn bound_report(
    k_full: &GramMatrix,
    mask: &SelectionMask,
    spectrum: &SpectralModel,
    p: &ConditionalDistribution,
) -> Result<BoundReport> {
    const OP: &str = "bound_report";
    let n = require_square(k_full, OP)?;
    if p.n() != n || spectrum.eigenfunctions().nrows() != n {
        return Err(Error::invalid(OP, "inconsistent shapes"));
    }
    let profile = power_profile(k_full, mask)?;
    let ted_half_value: f64 = profile.values.iter().sum();
    let trace_k = spectrum.trace();
    let first_term = ted_half_value / (2.0 * n as f64) * trace_k.sqrt();
    let classes = p.class_count();
    let lam = spectrum.eigenvalues();
    let mut eps_per_class = Vec::with_capacity(classes);
    let mut rkhs_factor = 0.0;
    let mut rkhs_ok = true;
    for c in 0..classes {
        let (a, null_mass) = class_coefficients(spectrum, p, c);
        let mut s = null_mass;
        let mut hnorm2 = 0.0;
        for (i, ai) in a.iter().enumerate() {
            let gap = 1.0 - lam[i];
            s += ai * ai * gap * gap;
            hnorm2 += ai * ai / (lam[i] * lam[i]);
        }
        eps_per_class.push(s.sqrt());
        if null_mass > 1e-6 {
            rkhs_ok = false;
        } else {
            rkhs_factor += hnorm2.sqrt();
        }
    }
    let total = first_term + 0.5 * eps_per_class.iter().sum::<f64>();
    let rkhs_variant = if rkhs_ok && classes > 0 {
        Some(first_term * rkhs_factor)
    } else {
        None
    };
    Ok(BoundReport {
        ted_half: ted_half_value,
        trace_k,
        eps_h_per_class: eps_per_class,
        first_term,
        total,
        rkhs_variant,
        clamped_count: profile.clamped_count,
    })
}

/// Verify the pointwise inequality |Tp(x) − proj Tp(x)| ≤ |P(x)|·√Tr·p̄_c
/// empirically; returns the maximum of (lhs − rhs) over all points, which
/// should not exceed numerical noise.
pub fn pointwise_projection_bound_check(
    k_full: &GramMatrix,
    mask: &SelectionMask,
    spectrum: &SpectralModel,
    p: &ConditionalDistribution,
    class_index: usize,
) -> Result<f64> {
    const OP: &str = "pointwise_projection_bound_check";
    let n = require_square(k_full, OP)?;
    require_mask(mask, n, OP)?;
    if class_index >= p.class_count() || p.n() != n {
        return Err(Error::invalid(OP, "inconsistent shapes"));
    }
    let v = k_full.values();
    let probs = p.probs();
    // Tp(x) = (1/N) Σ_y k(x,y) p(c|y).
    let mut tp = Array1::<f64>::zeros(n);
    for x in 0..n {
        let mut acc = 0.0;
        for y in 0..n {
            acc += v[(x, y)] * probs[(y, class_index)];
        }
        tp[x] = acc / n as f64;
    }
    let sel = mask.selected();
    let (kss, _) = selected_blocks(k_full, sel);
    let mut tp_s = Array2::<f64>::zeros((sel.len(), 1));
    for (a, &s) in sel.iter().enumerate() {
        tp_s[(a, 0)] = tp[s];
    }
    let (w, _) = linalg::ladder_solve(kss.view(), tp_s.view(), OP)?;
    let profile = power_profile(k_full, mask)?;
    let sqrt_trace = spectrum.trace().sqrt();
    let p_bar = probs.column(class_index).sum() / n as f64;
    let mut worst = f64::NEG_INFINITY;
    for x in 0..n {
        let mut proj = 0.0;
        for (a, &s) in sel.iter().enumerate() {
            proj += v[(x, s)] * w[(a, 0)];
        }
        let lhs = (tp[x] - proj).abs();
        let rhs = profile.values[x] * sqrt_trace * p_bar;
        worst = worst.max(lhs - rhs);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{gram, spectral_model, KernelSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn rbf_pair() -> GramMatrix {
        let pts = array![[0.0], [1.0]];
        gram(&KernelSpec::rbf(1.0).unwrap(), pts.view()).unwrap()
    }

    #[test]
    fn power_zero_at_selected_and_closed_form_elsewhere() {
        let k = rbf_pair();
        let mask = SelectionMask::new(vec![0], 2).unwrap();
        let prof = power_profile(&k, &mask).unwrap();
        assert_eq!(prof.values[0], 0.0);
        // √(1 − e^{−2}), frozen.
        assert_abs_diff_eq!(prof.values[1], 0.9298734950321937, epsilon = 1e-15);
        assert_eq!(prof.clamped_count, 0);
    }

    #[test]
    fn power_rank_one_linear_degeneracy() {
        let pts = array![[2.0], [3.0]];
        let k = gram(&KernelSpec::linear(), pts.view()).unwrap();
        let mask = SelectionMask::new(vec![0], 2).unwrap();
        let prof = power_profile(&k, &mask).unwrap();
        // k(3,3) − k(3,2)²/k(2,2) = 9 − 36/4 = 0: one selected point already
        // reproduces every function of a rank-1 kernel.
        assert_abs_diff_eq!(prof.values[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn ted_objective_examples() {
        let k = rbf_pair();
        let all = SelectionMask::new(vec![0, 1], 2).unwrap();
        assert_eq!(ted_objective(&k, &all, 0.0).unwrap(), 0.0);
        let mask = SelectionMask::new(vec![0], 2).unwrap();
        // 1 − e^{−2}, frozen.
        assert_abs_diff_eq!(
            ted_objective(&k, &mask, 0.0).unwrap(),
            0.8646647167633873,
            epsilon = 1e-15
        );
    }

    #[test]
    fn ted_objective_matches_squared_power_values() {
        let pts = array![[0.0, 0.2], [1.0, -0.4], [2.2, 0.9], [3.1, 0.1], [0.5, 2.0]];
        let k = gram(&KernelSpec::rbf(0.7).unwrap(), pts.view()).unwrap();
        let mask = SelectionMask::new(vec![1, 3], 5).unwrap();
        let obj = ted_objective(&k, &mask, 0.0).unwrap();
        let prof = power_profile(&k, &mask).unwrap();
        let sq: f64 = prof.values.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(obj, sq, epsilon = 1e-8);
    }

    #[test]
    fn ted_half_is_sum_of_power_values() {
        let k = rbf_pair();
        let all = SelectionMask::new(vec![0, 1], 2).unwrap();
        assert_eq!(ted_half(&k, &all).unwrap(), 0.0);
        let mask = SelectionMask::new(vec![0], 2).unwrap();
        assert_abs_diff_eq!(ted_half(&k, &mask).unwrap(), 0.9298734950321937, epsilon = 1e-15);
    }

    #[test]
    fn projection_interpolates_at_nodes_and_decays() {
        let k = rbf_pair();
        let mask = SelectionMask::new(vec![0], 2).unwrap();
        let labels = array![[1.0, 0.0]];
        let est = projection_estimate(&k, &mask, labels.view()).unwrap();
        assert_abs_diff_eq!(est[(0, 0)], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(est[(0, 1)], 0.0, epsilon = 1e-10);
        // Query at distance 1: K_xS K_SS^{-1} = e^{−1}, frozen.
        assert_abs_diff_eq!(est[(1, 0)], 0.36787944117144233, epsilon = 1e-12);
        assert_eq!(est[(1, 1)], 0.0);
    }

    #[test]
    fn projection_zero_correlation_gives_zero_rows() {
        let k = GramMatrix::from_values(ndarray::Array2::eye(3)).unwrap();
        let mask = SelectionMask::new(vec![0], 3).unwrap();
        let labels = array![[0.0, 1.0]];
        let est = projection_estimate(&k, &mask, labels.view()).unwrap();
        assert_eq!(est[(1, 0)], 0.0);
        assert_eq!(est[(1, 1)], 0.0);
        assert_eq!(est[(2, 1)], 0.0);
    }

    #[test]
    fn projection_rejects_soft_labels() {
        let k = rbf_pair();
        let mask = SelectionMask::new(vec![0], 2).unwrap();
        let labels = array![[0.5, 0.5]];
        assert!(projection_estimate(&k, &mask, labels.view()).is_err());
    }

    #[test]
    fn eps_h_frozen_hand_instance() {
        // K = diag(1.2, 0) on two points: single kept component with
        // λ̂ = 0.6 and φ = √2·(1,0) up to sign. The class-0 column
        // (√0.5, √0.08) then has a = 0.5, captured energy 0.25, total
        // energy 0.29, null mass 0.04.
        let k = GramMatrix::from_values(array![[1.2, 0.0], [0.0, 0.0]]).unwrap();
        let model = spectral_model(&k, 0.0).unwrap();
        assert_eq!(model.rank(), 1);
        assert_abs_diff_eq!(model.eigenvalues()[0], 0.6, epsilon = 1e-12);
        let c0 = 0.5f64.sqrt();
        let c1 = 0.08f64.sqrt();
        let p = ConditionalDistribution::new(array![[c0, 1.0 - c0], [c1, 1.0 - c1]]).unwrap();
        let e = eps_h(&model, &p, 0).unwrap();
        // √(0.25·0.16 + 0.04) = √0.08, frozen.
        assert_abs_diff_eq!(e, 0.282842712474619, epsilon = 1e-12);
    }

    #[test]
    fn eps_h_vanishes_in_flat_spectrum_and_for_zero_class() {
        let n = 3;
        let k = GramMatrix::from_values(ndarray::Array2::eye(n) * n as f64).unwrap();
        let model = spectral_model(&k, 0.0).unwrap();
        let p = ConditionalDistribution::new(array![
            [0.2, 0.8],
            [0.9, 0.1],
            [0.5, 0.5]
        ])
        .unwrap();
        // The null mass is a difference of nearly equal sums, so near zero
        // eps_h carries a √ulp-level residual of about 1e-8.
        assert_abs_diff_eq!(eps_h(&model, &p, 0).unwrap(), 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(eps_h(&model, &p, 1).unwrap(), 0.0, epsilon = 1e-7);

        let zero_class = ConditionalDistribution::new(array![
            [0.0, 1.0],
            [0.0, 1.0],
            [0.0, 1.0]
        ])
        .unwrap();
        assert_eq!(eps_h(&model, &zero_class, 0).unwrap(), 0.0);
    }

    #[test]
    fn bound_report_two_point_instance() {
        let k = rbf_pair();
        let model = spectral_model(&k, 0.0).unwrap();
        let mask = SelectionMask::new(vec![0], 2).unwrap();
        let p = ConditionalDistribution::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let rep = bound_report(&k, &mask, &model, &p).unwrap();
        assert_abs_diff_eq!(rep.ted_half, 0.9298734950321937, epsilon = 1e-14);
        assert_abs_diff_eq!(rep.trace_k, 1.0, epsilon = 1e-12);
        // ted_half/(2N)·√Tr = 0.9298734950321937/4, frozen.
        assert_abs_diff_eq!(rep.first_term, 0.23246837375804843, epsilon = 1e-14);
        assert_eq!(rep.eps_h_per_class.len(), 2);
        assert!(rep.total >= rep.first_term);
        assert_abs_diff_eq!(
            rep.total,
            rep.first_term + 0.5 * rep.eps_h_per_class.iter().sum::<f64>(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn bound_report_full_selection_has_zero_first_term() {
        let k = rbf_pair();
        let model = spectral_model(&k, 0.0).unwrap();
        let mask = SelectionMask::new(vec![0, 1], 2).unwrap();
        let p = ConditionalDistribution::new(array![[0.7, 0.3], [0.2, 0.8]]).unwrap();
        let rep = bound_report(&k, &mask, &model, &p).unwrap();
        assert_eq!(rep.ted_half, 0.0);
        assert_eq!(rep.first_term, 0.0);
        assert_abs_diff_eq!(
            rep.total,
            0.5 * rep.eps_h_per_class.iter().sum::<f64>(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn pointwise_check_full_selection_never_violates() {
        let pts = array![[0.0], [0.8], [1.7], [2.1]];
        let k = gram(&KernelSpec::rbf(1.0).unwrap(), pts.view()).unwrap();
        let model = spectral_model(&k, 0.0).unwrap();
        let p = ConditionalDistribution::new(array![
            [0.9, 0.1],
            [0.6, 0.4],
            [0.3, 0.7],
            [0.2, 0.8]
        ])
        .unwrap();
        let all = SelectionMask::new(vec![0, 1, 2, 3], 4).unwrap();
        let v = pointwise_projection_bound_check(&k, &all, &model, &p, 0).unwrap();
        assert!(v <= 1e-10, "violation {v}");
        let partial = SelectionMask::new(vec![1], 4).unwrap();
        let v = pointwise_projection_bound_check(&k, &partial, &model, &p, 0).unwrap();
        assert!(v <= 1e-8, "violation {v}");
    }
}
