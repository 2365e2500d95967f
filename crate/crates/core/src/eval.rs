//! Evaluation side: the nearest-selected-point estimator, ratio checks
//! against a known-Lipschitz posterior, a k-NN baseline classifier,
//! Spearman correlation, and the sweep harness that ties selection
//! quality to classification error across labelling budgets.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::approx;
use crate::data::{
    conditional_total_variation, ConditionalDistribution, Dataset, Labels, SelectionMask,
};
use crate::error::{Error, Result};
use crate::kernel::{gram, GramMatrix, KernelSpec};
use crate::select::{self, SelectionResult, Strategy};

fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

/// Index into `mask.selected()` of the point nearest to `x`, breaking
/// distance ties toward the lower selected index.
fn nearest_selected(features: ArrayView2<f64>, mask: &SelectionMask, x: usize) -> usize {
    let mut arg = 0;
    let mut best = f64::INFINITY;
    for (pos, &s) in mask.selected().iter().enumerate() {
        let d = euclidean(features.row(x), features.row(s));
        if d < best {
            best = d;
            arg = pos;
        }
    }
    arg
}

/// Every point copies the conditional row of its nearest selected point.
/// `p_at_s` holds one row per selected index, in mask (ascending) order.
pub fn neighbors_estimate(
    features: ArrayView2<f64>,
    mask: &SelectionMask,
    p_at_s: &ConditionalDistribution,
) -> Result<ConditionalDistribution> {
    const OP: &str = "neighbors_estimate";
    let n = features.nrows();
    if mask.is_empty() {
        return Err(Error::invalid(OP, "selection is empty"));
    }
    if let Some(&last) = mask.selected().last() {
        if last >= n {
            return Err(Error::invalid(OP, format!("index {last} out of range")));
        }
    }
    if p_at_s.n() != mask.len() {
        return Err(Error::invalid(OP, "one conditional row per selected point required"));
    }
    let rows = p_at_s.probs();
    let mut out = Array2::<f64>::zeros((n, p_at_s.class_count()));
    for x in 0..n {
        let pos = nearest_selected(features, mask, x);
        out.row_mut(x).assign(&rows.row(pos));
    }
    ConditionalDistribution::new(out)
}

/// A 1-D synthetic instance with an exactly known conditional distribution
/// and a per-class Lipschitz constant for it.
#[derive(Debug, Clone)]
pub struct LipschitzInstance {
    features: Array2<f64>,
    posterior: ConditionalDistribution,
    lipschitz: f64,
}

impl LipschitzInstance {
    /// Two-class logistic posterior p(1|x) = 1/(1+exp(−a·x)); each class
    /// probability is Lipschitz in x with constant |a|/4.
    pub fn logistic(xs: ArrayView1<f64>, a: f64) -> Result<Self> {
        const OP: &str = "LipschitzInstance::logistic";
        if xs.is_empty() {
            return Err(Error::invalid(OP, "empty point set"));
        }
        if !a.is_finite() {
            return Err(Error::invalid(OP, "slope must be finite"));
        }
        let n = xs.len();
        let mut probs = Array2::<f64>::zeros((n, 2));
        let mut features = Array2::<f64>::zeros((n, 1));
        for (i, &x) in xs.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::invalid(OP, "non-finite point"));
            }
            let p1 = 1.0 / (1.0 + (-a * x).exp());
            probs[(i, 0)] = 1.0 - p1;
            probs[(i, 1)] = p1;
            features[(i, 0)] = x;
        }
        Ok(LipschitzInstance {
            features,
            posterior: ConditionalDistribution::new(probs)?,
            lipschitz: a.abs() / 4.0,
        })
    }

    /// Position-independent posterior; the Lipschitz constant is 0.
    pub fn constant(xs: ArrayView1<f64>, row: ArrayView1<f64>) -> Result<Self> {
        const OP: &str = "LipschitzInstance::constant";
        if xs.is_empty() {
            return Err(Error::invalid(OP, "empty point set"));
        }
        let n = xs.len();
        let c = row.len();
        let mut probs = Array2::<f64>::zeros((n, c));
        let mut features = Array2::<f64>::zeros((n, 1));
        for (i, &x) in xs.iter().enumerate() {
            features[(i, 0)] = x;
            for (j, &p) in row.iter().enumerate() {
                probs[(i, j)] = p;
            }
        }
        Ok(LipschitzInstance {
            features,
            posterior: ConditionalDistribution::new(probs)?,
            lipschitz: 0.0,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn posterior(&self) -> &ConditionalDistribution {
        &self.posterior
    }

    /// Per-class Lipschitz constant L of x ↦ p(c|x).
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn class_count(&self) -> usize {
        self.posterior.class_count()
    }
}

/// For each requested size, select that many points by facility location,
/// estimate conditionals by the nearest-selected-point rule using the exact
/// rows at the selection, and report (Z(S), mean-TV / Z(S)). A fully
/// selected instance has Z = 0 and reports ratio 0.
pub fn theorem1_ratio_check(
    instance: &LipschitzInstance,
    sizes: &[usize],
) -> Result<Vec<(f64, f64)>> {
    const OP: &str = "theorem1_ratio_check";
    if sizes.is_empty() {
        return Err(Error::invalid(OP, "no sizes requested"));
    }
    let n = instance.features.nrows();
    let max_m = *sizes.iter().max().expect("nonempty");
    if max_m > n {
        return Err(Error::invalid(OP, "m exceeds dataset size"));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid(OP, "m must be positive"));
    }
    // Greedy facility location is nested, so one full run serves every size.
    let run = select::select_facility_location(instance.features(), max_m)?;
    let mut out = Vec::with_capacity(sizes.len());
    for &m in sizes {
        let mask = run.prefix_mask(m, n)?;
        let z = select::facility_location_value(instance.features(), &mask)?;
        let p_at_s = instance.posterior.rows_at(mask.selected())?;
        let est = neighbors_estimate(instance.features(), &mask, &p_at_s)?;
        let dtv = conditional_total_variation(&instance.posterior, &est)?;
        let ratio = if z > 0.0 { dtv / z } else { 0.0 };
        out.push((z, ratio));
    }
    Ok(out)
}

/// k-nearest selected neighbours vote. Returns per-point predicted classes
/// and the vote-fraction posterior. Distance ties resolve toward the lower
/// selected index, vote ties toward the lower class id.
pub fn knn_classify(
    features: ArrayView2<f64>,
    mask: &SelectionMask,
    labels: &Labels,
    k: usize,
) -> Result<(Vec<usize>, ConditionalDistribution)> {
    const OP: &str = "knn_classify";
    let n = features.nrows();
    if mask.is_empty() {
        return Err(Error::invalid(OP, "selection is empty"));
    }
    if k == 0 || k > mask.len() {
        return Err(Error::invalid(OP, "k must satisfy 1 <= k <= selection size"));
    }
    if labels.values.len() != n {
        return Err(Error::invalid(OP, "labels length must match point count"));
    }
    let c = labels.class_count;
    let mut predictions = Vec::with_capacity(n);
    let mut probs = Array2::<f64>::zeros((n, c));
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(mask.len());
    for x in 0..n {
        order.clear();
        for &s in mask.selected() {
            order.push((euclidean(features.row(x), features.row(s)), s));
        }
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distance").then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; c];
        for &(_, s) in order.iter().take(k) {
            votes[labels.values[s]] += 1;
        }
        let mut best = 0;
        for cls in 1..c {
            if votes[cls] > votes[best] {
                best = cls;
            }
        }
        predictions.push(best);
        for cls in 0..c {
            probs[(x, cls)] = votes[cls] as f64 / k as f64;
        }
    }
    Ok((predictions, ConditionalDistribution::new(probs)?))
}

/// Spearman rank correlation with average ranks on ties. Undefined (and an
/// error) for fewer than 3 points or for a constant input.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    const OP: &str = "spearman";
    if xs.len() != ys.len() {
        return Err(Error::invalid(OP, "length mismatch"));
    }
    if xs.len() < 3 {
        return Err(Error::invalid(OP, "need at least 3 points"));
    }
    for v in xs.iter().chain(ys.iter()) {
        if !v.is_finite() {
            return Err(Error::invalid(OP, "non-finite input"));
        }
    }
    let rank = |v: &[f64]| -> Result<Vec<f64>> {
        let n = v.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite").then(a.cmp(&b)));
        let mut ranks = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &p in &idx[i..=j] {
                ranks[p] = avg;
            }
            i = j + 1;
        }
        if v.iter().all(|&x| x == v[0]) {
            return Err(Error::invalid(OP, "constant input has no rank order"));
        }
        Ok(ranks)
    };
    let rx = rank(xs)?;
    let ry = rank(ys)?;
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..xs.len() {
        let dx = rx[i] - mean;
        let dy = ry[i] - mean;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Mean total variation between a ground-truth conditional and a raw
/// estimate matrix. Estimate entries are clamped to [0,1] (without
/// renormalizing) before the comparison, matching how out-of-simplex
/// projection estimates are read as distributions.
pub fn estimate_total_variation(
    truth: &ConditionalDistribution,
    estimate: ArrayView2<f64>,
) -> Result<f64> {
    const OP: &str = "estimate_total_variation";
    if estimate.nrows() != truth.n() || estimate.ncols() != truth.class_count() {
        return Err(Error::invalid(OP, "shape mismatch"));
    }
    let p = truth.probs();
    let mut total = 0.0;
    for i in 0..truth.n() {
        let mut l1 = 0.0;
        for c in 0..truth.class_count() {
            let q = estimate[(i, c)].clamp(0.0, 1.0);
            l1 += (p[(i, c)] - q).abs();
        }
        total += 0.5 * l1;
    }
    Ok(total / truth.n() as f64)
}

/// One sweep cell: a strategy evaluated at one labelling fraction.
/// `degenerate_eval` marks cells whose unlabelled set was empty, where the
/// error rate is reported as 0.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub strategy_id: String,
    pub fraction: f64,
    pub m: usize,
    pub ted_half_trace: f64,
    pub facility_value: f64,
    pub error_rate: f64,
    pub delta_tv: Option<f64>,
    pub bound_total: Option<f64>,
    pub degenerate_eval: bool,
}

/// Sweep configuration. `truth` enables the optional total-variation and
/// bound columns; `weights` feeds the weighted facility strategy when it
/// is listed.
#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub strategies: Vec<Strategy>,
    pub fractions: Vec<f64>,
    pub seed: u64,
    pub knn_k: usize,
    pub ridge: f64,
    pub sequential_gamma: f64,
    pub sequential_scale: f64,
    pub sequential_max_iter: usize,
    pub sequential_tol: f64,
    pub truth: Option<ConditionalDistribution>,
    pub weights: Option<Array1<f64>>,
}

impl SweepOptions {
    pub fn new(strategies: Vec<Strategy>, fractions: Vec<f64>, seed: u64) -> Self {
        SweepOptions {
            strategies,
            fractions,
            seed,
            knn_k: 5,
            ridge: 0.0,
            sequential_gamma: 1.0,
            sequential_scale: 1.0,
            sequential_max_iter: 50,
            sequential_tol: 1e-6,
            truth: None,
            weights: None,
        }
    }
}

/// The labelling fractions used when none are configured: 5% to 90% in 5%
/// steps.
pub fn default_fractions() -> Vec<f64> {
    (1..=18).map(|i| i as f64 * 0.05).collect()
}

/// Seeds an uncertainty run when no posterior is supplied: label a small
/// random pool, fit the k-NN baseline on it, and rank by its uncertainty.
pub fn bootstrap_posterior(
    dataset: &Dataset,
    labels: &Labels,
    knn_k: usize,
    seed: u64,
) -> Result<ConditionalDistribution> {
    let n = dataset.n();
    let pool = knn_k.max(n.div_ceil(20)).min(n);
    let start = select::select_random(n, pool, seed.wrapping_add(0x9e37_79b9))?;
    let mask = start.mask(n)?;
    let k_eff = knn_k.min(pool);
    let (_, posterior) = knn_classify(dataset.features(), &mask, labels, k_eff)?;
    Ok(posterior)
}

fn run_strategy(
    dataset: &Dataset,
    k_full: &GramMatrix,
    labels: &Labels,
    strategy: Strategy,
    m: usize,
    opts: &SweepOptions,
) -> Result<SelectionResult> {
    const OP: &str = "run_sweep";
    let n = dataset.n();
    match strategy {
        Strategy::Random => select::select_random(n, m, opts.seed),
        Strategy::Facility => select::select_facility_location(dataset.features(), m),
        Strategy::FacilityWeighted => {
            let w = opts
                .weights
                .as_ref()
                .ok_or_else(|| Error::invalid(OP, "facility-weighted requires weights"))?;
            select::select_facility_location_weighted(dataset.features(), m, w.view())
        }
        Strategy::TedGreedy => select::select_ted_greedy(k_full, m, opts.ridge),
        Strategy::TedSequential => select::select_ted_sequential(
            k_full,
            m,
            opts.sequential_gamma,
            opts.sequential_scale,
            opts.sequential_max_iter,
            opts.sequential_tol,
        ),
        Strategy::InverseDiagonal => select::select_inverse_diagonal(k_full, m),
        Strategy::Uncertainty => {
            let posterior = bootstrap_posterior(dataset, labels, opts.knn_k, opts.seed)?;
            select::select_uncertainty(&posterior, m)
        }
    }
}

/// Evaluates every (strategy, fraction) cell: select m = round(fraction·N)
/// points, then record the half-trace, the facility value, and the k-NN
/// error on the unlabelled points. Records are emitted strategies-in-given-
/// order, fractions ascending, independent of any execution interleaving.
pub fn run_sweep(
    dataset: &Dataset,
    spec: &KernelSpec,
    opts: &SweepOptions,
) -> Result<Vec<SweepRecord>> {
    const OP: &str = "run_sweep";
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::invalid(OP, "sweep requires labels"))?;
    if opts.strategies.is_empty() {
        return Err(Error::invalid(OP, "no strategies listed"));
    }
    if opts.fractions.is_empty() {
        return Err(Error::invalid(OP, "no fractions listed"));
    }
    for &f in &opts.fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::invalid(OP, "fractions must lie in (0, 1]"));
        }
    }
    if opts.knn_k == 0 {
        return Err(Error::invalid(OP, "knn_k must be positive"));
    }
    let n = dataset.n();
    let mut fractions = opts.fractions.clone();
    fractions.sort_by(|a, b| a.partial_cmp(b).expect("finite fraction"));
    let ms: Vec<usize> = fractions
        .iter()
        .map(|f| ((f * n as f64).round() as usize).clamp(1, n))
        .collect();
    let m_max = *ms.iter().max().expect("nonempty");
    let k_full = gram(spec, dataset.features())?;
    if let Some(truth) = &opts.truth {
        if truth.n() != n {
            return Err(Error::invalid(OP, "truth size must match dataset"));
        }
    }

    let mut records = Vec::with_capacity(opts.strategies.len() * fractions.len());
    for &strategy in &opts.strategies {
        // Every strategy is prefix-consistent: greedy orders are nested and
        // ranking orders are truncations, so one run at the largest m serves
        // all fractions.
        let run = run_strategy(dataset, &k_full, labels, strategy, m_max, opts)?;
        for (fi, &fraction) in fractions.iter().enumerate() {
            let m = ms[fi];
            let mask = run.prefix_mask(m, n)?;
            let ted_half_trace = approx::ted_half(&k_full, &mask)?;
            let facility_value =
                select::facility_location_value(dataset.features(), &mask)?;
            let unlabelled: Vec<usize> = {
                let ind = mask.indicator(n);
                (0..n).filter(|&i| !ind[i]).collect()
            };
            let degenerate_eval = unlabelled.is_empty();
            let error_rate = if degenerate_eval {
                0.0
            } else {
                let k_eff = opts.knn_k.min(m);
                let (pred, _) = knn_classify(dataset.features(), &mask, labels, k_eff)?;
                let wrong = unlabelled
                    .iter()
                    .filter(|&&i| pred[i] != labels.values[i])
                    .count();
                wrong as f64 / unlabelled.len() as f64
            };
            let (delta_tv, bound_total) = match &opts.truth {
                None => (None, None),
                Some(truth) => {
                    let p_at_s = truth.rows_at(mask.selected())?;
                    let est = neighbors_estimate(dataset.features(), &mask, &p_at_s)?;
                    let dtv = conditional_total_variation(truth, &est)?;
                    (Some(dtv), None)
                }
            };
            records.push(SweepRecord {
                strategy_id: run.strategy_id.clone(),
                fraction,
                m,
                ted_half_trace,
                facility_value,
                error_rate,
                delta_tv,
                bound_total,
                degenerate_eval,
            });
        }
    }
    Ok(records)
}
