//! Python bindings for the selection toolkit. Matrices cross the boundary as
//! lists of equal-length float rows; selections as index lists.

use ndarray::Array2;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use kselect::data::SelectionMask;
use kselect::kernel::{self, GramMatrix, KernelFamily, KernelSpec};
use kselect::{approx, select};

fn to_py_err(e: kselect::Error) -> PyErr {
    match e {
        kselect::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        kselect::Error::Invalid { .. } => PyValueError::new_err(e.to_string()),
        kselect::Error::Numerical { .. } => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_array2(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Array2<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!("{what}: no rows")));
    }
    let d = rows[0].len();
    if d == 0 {
        return Err(PyValueError::new_err(format!("{what}: empty rows")));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err(format!("{what}: ragged rows")));
    }
    let mut a = Array2::<f64>::zeros((rows.len(), d));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    Ok(a)
}

fn to_gram(values: Vec<Vec<f64>>) -> PyResult<GramMatrix> {
    let a = to_array2(values, "gram")?;
    GramMatrix::from_values(a).map_err(to_py_err)
}

fn to_mask(selected: Vec<usize>, n: usize) -> PyResult<SelectionMask> {
    SelectionMask::new(selected, n).map_err(to_py_err)
}

fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Gram matrix of a point set under a named kernel. For "rbf" with gamma
/// omitted, the bandwidth defaults from the data spread.
#[pyfunction]
#[pyo3(signature = (points, kernel="rbf", gamma=None, scale=1.0, degree=2, coef0=1.0))]
fn gram_matrix(
    points: Vec<Vec<f64>>,
    kernel: &str,
    gamma: Option<f64>,
    scale: f64,
    degree: u32,
    coef0: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let pts = to_array2(points, "points")?;
    let family = match kernel {
        "linear" => KernelFamily::Linear,
        "rbf" => KernelFamily::Rbf {
            gamma: match gamma {
                Some(g) => g,
                None => kernel::default_rbf_gamma(pts.view()).map_err(to_py_err)?,
            },
        },
        "cosine" => KernelFamily::Cosine,
        "poly" => KernelFamily::Polynomial { degree, coef0 },
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown kernel \"{other}\" (linear, rbf, cosine, poly)"
            )));
        }
    };
    let spec = KernelSpec::new(family, scale).map_err(to_py_err)?;
    let k = kernel::gram(&spec, pts.view()).map_err(to_py_err)?;
    Ok(rows_of(&k.values().to_owned()))
}

/// Per-point residual magnitudes for one selection: exactly zero at selected
/// points, the square-root Schur diagonal elsewhere.
#[pyfunction]
fn power_values(gram: Vec<Vec<f64>>, selected: Vec<usize>) -> PyResult<Vec<f64>> {
    let k = to_gram(gram)?;
    let mask = to_mask(selected, k.nrows())?;
    let p = approx::power_profile(&k, &mask).map_err(to_py_err)?;
    Ok(p.values.to_vec())
}

/// Sum of the residual magnitudes over the whole dataset.
#[pyfunction]
fn ted_half(gram: Vec<Vec<f64>>, selected: Vec<usize>) -> PyResult<f64> {
    let k = to_gram(gram)?;
    let mask = to_mask(selected, k.nrows())?;
    approx::ted_half(&k, &mask).map_err(to_py_err)
}

/// Residual trace of the unlabelled block, with an optional ridge on the
/// selected block.
#[pyfunction]
#[pyo3(signature = (gram, selected, ridge=0.0))]
fn ted_objective(gram: Vec<Vec<f64>>, selected: Vec<usize>, ridge: f64) -> PyResult<f64> {
    let k = to_gram(gram)?;
    let mask = to_mask(selected, k.nrows())?;
    approx::ted_objective(&k, &mask, ridge).map_err(to_py_err)
}

/// Greedy residual-trace minimization. Returns (order, objective trajectory).
#[pyfunction]
#[pyo3(signature = (gram, m, ridge=0.0))]
fn select_ted_greedy(
    gram: Vec<Vec<f64>>,
    m: usize,
    ridge: f64,
) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let k = to_gram(gram)?;
    let r = select::select_ted_greedy(&k, m, ridge).map_err(to_py_err)?;
    Ok((r.order, r.objective_trajectory))
}

/// Greedy mean nearest-centre distance minimization over raw points.
/// Returns (order, objective trajectory).
#[pyfunction]
fn select_facility_location(
    points: Vec<Vec<f64>>,
    m: usize,
) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let pts = to_array2(points, "points")?;
    let r = select::select_facility_location(pts.view(), m).map_err(to_py_err)?;
    Ok((r.order, r.objective_trajectory))
}

/// Uniform selection without replacement, reproducible from the seed.
#[pyfunction]
#[pyo3(signature = (n, m, seed=0))]
fn select_random(n: usize, m: usize, seed: u64) -> PyResult<Vec<usize>> {
    let r = select::select_random(n, m, seed).map_err(to_py_err)?;
    Ok(r.order)
}

/// Largest-inverse-diagonal heuristic on the full Gram matrix.
/// Returns (order, score trajectory).
#[pyfunction]
fn select_inverse_diagonal(gram: Vec<Vec<f64>>, m: usize) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let k = to_gram(gram)?;
    let r = select::select_inverse_diagonal(&k, m).map_err(to_py_err)?;
    Ok((r.order, r.objective_trajectory))
}

/// Alternating-ranking selection. Returns (order, per-iteration relative
/// changes, converged flag).
#[pyfunction]
#[pyo3(signature = (gram, m, gamma=1.0, c=1.0, max_iter=50, tol=1e-6))]
fn select_ted_sequential(
    gram: Vec<Vec<f64>>,
    m: usize,
    gamma: f64,
    c: f64,
    max_iter: usize,
    tol: f64,
) -> PyResult<(Vec<usize>, Vec<f64>, bool)> {
    let k = to_gram(gram)?;
    let r = select::select_ted_sequential(&k, m, gamma, c, max_iter, tol).map_err(to_py_err)?;
    Ok((r.order, r.objective_trajectory, r.converged.unwrap_or(false)))
}

#[pymodule]
fn kselect_py(m: &Bound<PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gram_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(power_values, m)?)?;
    m.add_function(wrap_pyfunction!(ted_half, m)?)?;
    m.add_function(wrap_pyfunction!(ted_objective, m)?)?;
    m.add_function(wrap_pyfunction!(select_ted_greedy, m)?)?;
    m.add_function(wrap_pyfunction!(select_facility_location, m)?)?;
    m.add_function(wrap_pyfunction!(select_random, m)?)?;
    m.add_function(wrap_pyfunction!(select_inverse_diagonal, m)?)?;
    m.add_function(wrap_pyfunction!(select_ted_sequential, m)?)?;
    Ok(())
}
