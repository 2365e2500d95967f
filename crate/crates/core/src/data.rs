//! Datasets, selection masks, conditional distributions, CSV ingestion, and
//! the synthetic Gaussian-mixture generator with its exact posterior.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Integer class labels for a dataset, plus the original string names when
/// the source file used string-coded labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub values: Vec<usize>,
    pub class_count: usize,
    /// Present when labels were string-coded: names[id] is the original
    /// token, in first-appearance order, so outputs stay invertible.
    pub names: Option<Vec<String>>,
}

/// A feature matrix with optional class labels. Rows carry the empirical
/// measure: every formula in this crate weights them uniformly.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Option<Labels>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Option<Labels>) -> Result<Self> {
        const OP: &str = "Dataset::new";
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::invalid(OP, "feature matrix must be at least 1x1"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(OP, "non-finite feature"));
        }
        if let Some(l) = &labels {
            if l.values.len() != features.nrows() {
                return Err(Error::invalid(
                    OP,
                    format!(
                        "{} labels for {} rows",
                        l.values.len(),
                        features.nrows()
                    ),
                ));
            }
            if l.class_count < 2 {
                return Err(Error::invalid(OP, "class_count must be at least 2"));
            }
            if l.values.iter().any(|&v| v >= l.class_count) {
                return Err(Error::invalid(OP, "label out of class range"));
            }
        }
        Ok(Dataset { features, labels })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }
}

/// Sorted distinct indices of the selected (to-be-labelled) points. The
/// empty mask is allowed; the complement is the unlabelled set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMask {
    selected: Vec<usize>,
}

impl SelectionMask {
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        const OP: &str = "SelectionMask::new";
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid(OP, "duplicate index in selection"));
        }
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(Error::invalid(
                    OP,
                    format!("index {last} out of range for {n} points"),
                ));
            }
        }
        Ok(SelectionMask { selected: indices })
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Boolean membership vector of length n.
    pub fn indicator(&self, n: usize) -> Vec<bool> {
        let mut ind = vec![false; n];
        for &i in &self.selected {
            if i < n {
                ind[i] = true;
            }
        }
        ind
    }
}

/// Split {0,…,n−1} into (selected, unlabelled), both sorted ascending.
pub fn split_indices(mask: &SelectionMask, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    const OP: &str = "split_indices";
    if let Some(&last) = mask.selected.last() {
        if last >= n {
            return Err(Error::invalid(
                OP,
                format!("index {last} out of range for {n} points"),
            ));
        }
    }
    let ind = mask.indicator(n);
    let mut unlabelled = Vec::with_capacity(n - mask.len());
    for (i, sel) in ind.iter().enumerate() {
        if !sel {
            unlabelled.push(i);
        }
    }
    Ok((mask.selected.clone(), unlabelled))
}

/// Per-point conditional class distributions: an N×C matrix whose rows live
/// on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDistribution {
    probs: Array2<f64>,
}

impl ConditionalDistribution {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        const OP: &str = "ConditionalDistribution::new";
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::invalid(OP, "empty probability matrix"));
        }
        for (i, row) in probs.rows().into_iter().enumerate() {
            let mut sum = 0.0;
            for &v in row {
                if !(v >= 0.0) {
                    return Err(Error::invalid(
                        OP,
                        format!("negative or non-finite probability in row {i}"),
                    ));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(
                    OP,
                    format!("row {i} sums to {sum}, not 1"),
                ));
            }
        }
        Ok(ConditionalDistribution { probs })
    }

    pub fn probs(&self) -> ArrayView2<'_, f64> {
        self.probs.view()
    }

    pub fn n(&self) -> usize {
        self.probs.nrows()
    }

    pub fn class_count(&self) -> usize {
        self.probs.ncols()
    }

    /// Rows at the given indices, in the given order.
    pub fn rows_at(&self, indices: &[usize]) -> Result<ConditionalDistribution> {
        const OP: &str = "ConditionalDistribution::rows_at";
        let mut out = Array2::<f64>::zeros((indices.len(), self.class_count()));
        for (r, &i) in indices.iter().enumerate() {
            if i >= self.n() {
                return Err(Error::invalid(OP, format!("row {i} out of range")));
            }
            out.row_mut(r).assign(&self.probs.row(i));
        }
        Ok(ConditionalDistribution { probs: out })
    }
}

/// Mean over points of half the L1 distance between the two conditional
/// rows. Lives in [0,1]; zero iff the distributions agree.
pub fn conditional_total_variation(
    p: &ConditionalDistribution,
    q: &ConditionalDistribution,
) -> Result<f64> {
    const OP: &str = "conditional_total_variation";
    if p.n() != q.n() || p.class_count() != q.class_count() {
        return Err(Error::invalid(OP, "shape mismatch"));
    }
    let n = p.n() as f64;
    let mut total = 0.0;
    for (pr, qr) in p.probs.rows().into_iter().zip(q.probs.rows()) {
        let mut l1 = 0.0;
        for (a, b) in pr.iter().zip(qr.iter()) {
            l1 += (a - b).abs();
        }
        total += 0.5 * l1;
    }
    Ok(total / n)
}

/// Exact posterior of an isotropic Gaussian mixture with uniform class
/// prior, evaluated at arbitrary points.
pub fn mixture_posterior(
    points: ArrayView2<'_, f64>,
    centers: ArrayView2<'_, f64>,
    sigma: f64,
) -> Result<ConditionalDistribution> {
    const OP: &str = "mixture_posterior";
    if sigma <= 0.0 {
        return Err(Error::invalid(OP, "sigma must be positive"));
    }
    if points.ncols() != centers.ncols() {
        return Err(Error::invalid(OP, "dimension mismatch"));
    }
    let c = centers.nrows();
    let mut probs = Array2::<f64>::zeros((points.nrows(), c));
    for (r, x) in points.rows().into_iter().enumerate() {
        let mut logs = Array1::<f64>::zeros(c);
        for (k, mu) in centers.rows().into_iter().enumerate() {
            let d2: f64 = x
                .iter()
                .zip(mu.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            logs[k] = -d2 / (2.0 * sigma * sigma);
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in logs.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for k in 0..c {
            probs[(r, k)] = logs[k] / z;
        }
    }
    ConditionalDistribution::new(probs)
}

/// Degenerate conditional distribution that puts all mass on each point's
/// observed label.
pub fn one_hot(labels: &Labels) -> Result<ConditionalDistribution> {
    let mut probs = Array2::<f64>::zeros((labels.values.len(), labels.class_count));
    for (i, &c) in labels.values.iter().enumerate() {
        probs[(i, c)] = 1.0;
    }
    ConditionalDistribution::new(probs)
}

/// Draw n_per_class points from each isotropic Gaussian component and return
/// them with class labels and the exact posterior at every sample.
pub fn make_gaussian_mixture(
    seed: u64,
    n_per_class: usize,
    centers: ArrayView2<'_, f64>,
    sigma: f64,
) -> Result<(Dataset, ConditionalDistribution)> {
    const OP: &str = "make_gaussian_mixture";
    let c = centers.nrows();
    let d = centers.ncols();
    if c < 2 {
        return Err(Error::invalid(OP, "need at least 2 centers"));
    }
    if sigma <= 0.0 {
        return Err(Error::invalid(OP, "sigma must be positive"));
    }
    if n_per_class == 0 {
        return Err(Error::invalid(OP, "n_per_class must be positive"));
    }
    let n = c * n_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (k, mu) in centers.rows().into_iter().enumerate() {
        for _ in 0..n_per_class {
            for (j, m) in mu.iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                features[(row, j)] = m + sigma * z;
            }
            labels.push(k);
            row += 1;
        }
    }
    let posterior = mixture_posterior(features.view(), centers, sigma)?;
    let dataset = Dataset::new(
        features,
        Some(Labels {
            values: labels,
            class_count: c,
            names: None,
        }),
    )?;
    Ok((dataset, posterior))
}

/// Load a dataset from a headed CSV file. All columns are numeric features
/// except the optional label column, which may be integer-coded or
/// string-coded (strings are mapped to ids in first-appearance order).
pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<Dataset> {
    const OP: &str = "load_csv";
    let file = File::open(path).map_err(|e| Error::io(OP, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::invalid(OP, e.to_string()))?
        .clone();
    let label_idx = match label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::invalid(OP, format!("label column '{name}' not found")))?,
        ),
        None => None,
    };
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|i| Some(*i) != label_idx)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::invalid(OP, "no feature columns"));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::invalid(OP, e.to_string()))?;
        let mut row = Vec::with_capacity(feature_cols.len());
        for &ci in &feature_cols {
            let cell = record.get(ci).unwrap_or("");
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::invalid(
                    OP,
                    format!("non-numeric feature '{}' at row {}, column '{}'", cell, r, &headers[ci]),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::invalid(OP, format!("non-finite feature at row {r}")));
            }
            row.push(v);
        }
        rows.push(row);
        if let Some(li) = label_idx {
            raw_labels.push(record.get(li).unwrap_or("").trim().to_string());
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid(OP, "no data rows"));
    }
    let d = rows[0].len();
    let mut features = Array2::<f64>::zeros((rows.len(), d));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            features[(i, j)] = *v;
        }
    }

    let labels = if label_idx.is_some() {
        Some(code_labels(&raw_labels)?)
    } else {
        None
    };
    Dataset::new(features, labels)
}

/// Integer-coded when every token parses as a nonnegative integer; otherwise
/// string-coded by first appearance.
fn code_labels(raw: &[String]) -> Result<Labels> {
    const OP: &str = "load_csv";
    let as_ints: Option<Vec<usize>> = raw
        .iter()
        .map(|s| s.parse::<usize>().ok())
        .collect();
    if let Some(values) = as_ints {
        let max = values.iter().copied().max().unwrap_or(0);
        return Ok(Labels {
            class_count: (max + 1).max(2),
            values,
            names: None,
        });
    }
    let mut names: Vec<String> = Vec::new();
    let mut values = Vec::with_capacity(raw.len());
    for tok in raw {
        if tok.is_empty() {
            return Err(Error::invalid(OP, "empty label cell"));
        }
        let id = match names.iter().position(|n| n == tok) {
            Some(i) => i,
            None => {
                names.push(tok.clone());
                names.len() - 1
            }
        };
        values.push(id);
    }
    Ok(Labels {
        class_count: names.len().max(2),
        values,
        names: Some(names),
    })
}

/// Write a dataset as CSV with headers f0…f{d−1} and an optional label
/// column. Floats use shortest round-trip formatting so a reload is exact.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    const OP: &str = "save_csv";
    let file = File::create(path).map_err(|e| Error::io(OP, e))?;
    let mut w = BufWriter::new(file);
    let d = dataset.dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    if dataset.labels().is_some() {
        header.push("label".to_string());
    }
    writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(OP, e))?;
    for i in 0..dataset.n() {
        let mut cells: Vec<String> = (0..d).map(|j| format!("{}", dataset.features()[(i, j)])).collect();
        if let Some(l) = dataset.labels() {
            let id = l.values[i];
            match &l.names {
                Some(names) => cells.push(names[id].clone()),
                None => cells.push(format!("{id}")),
            }
        }
        writeln!(w, "{}", cells.join(",")).map_err(|e| Error::io(OP, e))?;
    }
    w.flush().map_err(|e| Error::io(OP, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_csv_without_labels() {
        let f = write_temp("a,b\n1,2\n3,4\n5,6\n7,8\n");
        let ds = load_csv(f.path(), None).unwrap();
        assert_eq!(ds.n(), 4);
        assert_eq!(ds.dim(), 2);
        assert!(ds.labels().is_none());
        assert_eq!(ds.features()[(3, 1)], 8.0);
    }

    #[test]
    fn load_csv_string_labels_first_appearance() {
        let f = write_temp("x,y\n1.0,a\n2.0,b\n3.0,a\n");
        let ds = load_csv(f.path(), Some("y")).unwrap();
        let l = ds.labels().unwrap();
        assert_eq!(l.values, vec![0, 1, 0]);
        assert_eq!(l.class_count, 2);
        assert_eq!(l.names.as_deref(), Some(&["a".to_string(), "b".to_string()][..]));
    }

    #[test]
    fn load_csv_rejects_non_finite() {
        let f = write_temp("x\n1.0\nNaN\n");
        let err = load_csv(f.path(), None).unwrap_err();
        assert!(err.to_string().contains("non-finite feature"));
    }

    #[test]
    fn load_csv_rejects_ragged_rows() {
        let f = write_temp("x,y\n1,2\n3\n");
        assert!(load_csv(f.path(), None).is_err());
    }

    #[test]
    fn load_csv_missing_file_is_io_error() {
        let err = load_csv(Path::new("/nonexistent/file.csv"), None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = Dataset::new(
            array![[0.1, -2.5e-13], [3.0, std::f64::consts::PI], [1e100, 7.0]],
            Some(Labels {
                values: vec![0, 1, 1],
                class_count: 2,
                names: Some(vec!["neg".into(), "pos".into()]),
            }),
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_csv(&ds, f.path()).unwrap();
        let back = load_csv(f.path(), Some("label")).unwrap();
        assert_eq!(back.features(), ds.features());
        assert_eq!(back.labels(), ds.labels());
    }

    #[test]
    fn ctv_identical_is_zero_and_disjoint_is_one() {
        let p = ConditionalDistribution::new(array![[0.3, 0.7], [0.5, 0.5]]).unwrap();
        assert_eq!(conditional_total_variation(&p, &p).unwrap(), 0.0);
        let a = ConditionalDistribution::new(array![[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let b = ConditionalDistribution::new(array![[0.0, 1.0], [0.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(conditional_total_variation(&a, &b).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn ctv_two_row_example() {
        // Rows (0.8,0.2),(0.6,0.4) vs (0.6,0.4),(0.6,0.4): half-L1 per row
        // 0.2 and 0, mean 0.1.
        let p = ConditionalDistribution::new(array![[0.8, 0.2], [0.6, 0.4]]).unwrap();
        let q = ConditionalDistribution::new(array![[0.6, 0.4], [0.6, 0.4]]).unwrap();
        assert_abs_diff_eq!(
            conditional_total_variation(&p, &q).unwrap(),
            0.1,
            epsilon = 1e-15
        );
    }

    #[test]
    fn ctv_shape_mismatch_is_error() {
        let p = ConditionalDistribution::new(array![[0.5, 0.5]]).unwrap();
        let q = ConditionalDistribution::new(array![[0.5, 0.5], [1.0, 0.0]]).unwrap();
        assert!(conditional_total_variation(&p, &q).is_err());
    }

    #[test]
    fn mixture_posterior_midway_is_half() {
        let centers = array![[-1.0, 0.0], [1.0, 0.0]];
        let x = array![[0.0, 5.0]];
        let p = mixture_posterior(x.view(), centers.view(), 0.7).unwrap();
        assert_abs_diff_eq!(p.probs()[(0, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.probs()[(0, 1)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn mixture_posterior_separated_centers_saturate() {
        // ‖mu0 − mu1‖ = 10σ; at x = mu0 the posterior mass on class 0 is
        // 1/(1 + e^{−50}) ≥ 1 − 1e−9.
        let sigma = 0.5;
        let centers = array![[0.0], [5.0]];
        let x = array![[0.0]];
        let p = mixture_posterior(x.view(), centers.view(), sigma).unwrap();
        assert!(p.probs()[(0, 0)] >= 1.0 - 1e-9);
    }

    #[test]
    fn mixture_same_seed_is_bit_identical() {
        let centers = array![[0.0, 0.0], [3.0, 3.0]];
        let (a, pa) = make_gaussian_mixture(9, 25, centers.view(), 1.0).unwrap();
        let (b, pb) = make_gaussian_mixture(9, 25, centers.view(), 1.0).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(pa.probs(), pb.probs());
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn mixture_posterior_rows_sum_to_one() {
        let centers = array![[0.0], [2.0], [5.0]];
        let (_, p) = make_gaussian_mixture(3, 40, centers.view(), 1.3).unwrap();
        for row in p.probs().rows() {
            let s: f64 = row.sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn split_indices_examples() {
        let mask = SelectionMask::new(vec![2, 0], 4).unwrap();
        let (train, rest) = split_indices(&mask, 4).unwrap();
        assert_eq!(train, vec![0, 2]);
        assert_eq!(rest, vec![1, 3]);

        let empty = SelectionMask::new(vec![], 4).unwrap();
        let (t, u) = split_indices(&empty, 4).unwrap();
        assert!(t.is_empty());
        assert_eq!(u, vec![0, 1, 2, 3]);

        let all = SelectionMask::new(vec![0, 1, 2, 3], 4).unwrap();
        let (t, u) = split_indices(&all, 4).unwrap();
        assert_eq!(t.len(), 4);
        assert!(u.is_empty());
    }

    #[test]
    fn mask_rejects_duplicates_and_out_of_range() {
        assert!(SelectionMask::new(vec![1, 1], 3).is_err());
        assert!(SelectionMask::new(vec![3], 3).is_err());
    }
}
