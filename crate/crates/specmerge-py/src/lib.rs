//! Python bindings for the continual-learning core: thin SVD, spectral
//! adapter merging, stream construction, metrics, and full experiment runs.
//!
//! Matrices cross the boundary as lists of rows; experiment configuration
//! arrives as keyword overrides with the same keys as the CLI config format.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use specmerge::harness::{self, RunConfig};
use specmerge::linalg::{self, Matrix};
use specmerge::merge::{self, MergeConfig};
use specmerge::metrics::{self, StepRecord};
use specmerge::stream;
use specmerge::train;

fn err(e: specmerge::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("matrix needs at least one row"));
    }
    let cols = rows[0].len();
    let mut data = Vec::with_capacity(rows.len() * cols);
    for row in &rows {
        if row.len() != cols {
            return Err(PyValueError::new_err("ragged rows"));
        }
        data.extend_from_slice(row);
    }
    Matrix::new(rows.len(), cols, data).map_err(err)
}

fn from_matrix(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn config_from_kwargs(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(kwargs) = kwargs {
        for (key, value) in kwargs.iter() {
            let key: String = key.extract()?;
            let value = value.str()?.to_string();
            cfg.set(&key, &value).map_err(err)?;
        }
    }
    Ok(cfg)
}

/// `(u, sigma, vt)` as nested lists.
type SvdTriple = (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>);

/// Thin SVD of a dense matrix; returns `(u, sigma, vt)`.
#[pyfunction]
fn thin_svd(a: Vec<Vec<f64>>) -> PyResult<SvdTriple> {
    let f = linalg::thin_svd(&to_matrix(a)?).map_err(err)?;
    Ok((from_matrix(&f.u), f.sigma.clone(), from_matrix(&f.vt)))
}

/// Recomposes `u * diag(sigma) * vt`.
#[pyfunction]
fn reconstruct(
    u: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    vt: Vec<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let f = linalg::SvdFactors {
        u: to_matrix(u)?,
        sigma,
        vt: to_matrix(vt)?,
    };
    Ok(from_matrix(&linalg::reconstruct(&f).map_err(err)?))
}

/// Class-count blend weights `(w_base, w_new)`.
#[pyfunction]
fn class_count_weights(c_old: usize, c_new: usize) -> PyResult<(f64, f64)> {
    merge::class_count_weights(c_old, c_new).map_err(err)
}

/// Full spectral merge of two equally shaped matrices.
#[pyfunction]
#[pyo3(signature = (m_base, m_new, c_old, c_new, head_ratio=0.3, gamma_head=0.2, gamma_tail=0.9))]
fn merge_matrix(
    m_base: Vec<Vec<f64>>,
    m_new: Vec<Vec<f64>>,
    c_old: usize,
    c_new: usize,
    head_ratio: f64,
    gamma_head: f64,
    gamma_tail: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let cfg = MergeConfig::new(c_old, c_new, head_ratio, gamma_head, gamma_tail).map_err(err)?;
    let out = merge::merge_matrix(&to_matrix(m_base)?, &to_matrix(m_new)?, &cfg).map_err(err)?;
    Ok(from_matrix(&out))
}

/// Geometric step proportions `rho^((t-1)/(T-1))`.
#[pyfunction]
fn step_proportions(rho: f64, t_steps: usize) -> PyResult<Vec<f64>> {
    stream::step_proportions(rho, t_steps).map_err(err)
}

/// Largest-remainder class allocation with a floor of one per step.
#[pyfunction]
fn allocate_classes(proportions: Vec<f64>, total_classes: usize) -> PyResult<Vec<usize>> {
    stream::allocate_classes(&proportions, total_classes).map_err(err)
}

/// Exponential long-tail per-class sample counts.
#[pyfunction]
fn longtail_counts(num_classes: usize, n_max: usize, class_rho: f64) -> PyResult<Vec<usize>> {
    stream::longtail_counts(num_classes, n_max, class_rho).map_err(err)
}

/// Prior-shifted logits `z + log(pi)`, given per-class frequencies aligned
/// with the logit order.
#[pyfunction]
fn balanced_logits(z: Vec<f64>, pi: Vec<f64>) -> PyResult<Vec<f64>> {
    let classes: Vec<usize> = (0..z.len()).collect();
    let priors = train::ClassPriors::from_frequencies(&classes, &pi).map_err(err)?;
    train::balanced_logits(&z, &priors, &classes).map_err(err)
}

/// Weighted average accuracy from per-step accuracies and class counts.
#[pyfunction]
fn weighted_average_accuracy(accuracies: Vec<f64>, class_counts: Vec<usize>) -> PyResult<f64> {
    if accuracies.len() != class_counts.len() {
        return Err(PyValueError::new_err(
            "accuracies and class_counts must have the same length",
        ));
    }
    let records: Vec<StepRecord> = accuracies
        .iter()
        .enumerate()
        .map(|(i, a)| StepRecord {
            step_index: i + 1,
            accumulated_class_count: class_counts[..=i].iter().sum(),
            accuracy: *a,
            per_class: Default::default(),
        })
        .collect();
    metrics::weighted_average_accuracy(&records, &class_counts).map_err(err)
}

fn report_dict<'py>(
    py: Python<'py>,
    report: &metrics::MetricsReport,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item(
        "step_accuracies",
        report.records.iter().map(|r| r.accuracy).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "accumulated_classes",
        report
            .records
            .iter()
            .map(|r| r.accumulated_class_count)
            .collect::<Vec<_>>(),
    )?;
    d.set_item("a_final", report.a_final)?;
    d.set_item("a_bar", report.a_bar)?;
    d.set_item("wa_bar", report.wa_bar)?;
    d.set_item("large", report.groups.large)?;
    d.set_item("middle", report.groups.middle)?;
    d.set_item("small", report.groups.small)?;
    Ok(d)
}

/// One continual run; keyword overrides use the config-file keys
/// (`total_classes`, `num_steps`, `rho`, `variant`, ...).
#[pyfunction]
#[pyo3(signature = (seed, **kwargs))]
fn run_continual<'py>(
    py: Python<'py>,
    seed: u64,
    kwargs: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config_from_kwargs(kwargs)?;
    let out = harness::run_continual(&cfg, seed).map_err(err)?;
    let d = report_dict(py, &out.report)?;
    d.set_item("adapter_counts", out.adapter_counts)?;
    d.set_item(
        "step_sizes",
        out.protocol.step_sizes(),
    )?;
    Ok(d)
}

/// The five-variant ablation ladder over the configured seed list; returns
/// `{variant: {"mean_a_final": ..., "std_a_final": ..., ...}}`.
#[pyfunction]
#[pyo3(signature = (**kwargs))]
fn run_ablation<'py>(
    py: Python<'py>,
    kwargs: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config_from_kwargs(kwargs)?;
    let results = harness::run_ablation(&cfg).map_err(err)?;
    let table = PyDict::new(py);
    for result in &results {
        let row = PyDict::new(py);
        let a = &result.aggregate;
        row.set_item("mean_a_final", a.mean_a_final)?;
        row.set_item("std_a_final", a.std_a_final)?;
        row.set_item("mean_a_bar", a.mean_a_bar)?;
        row.set_item("mean_wa_bar", a.mean_wa_bar)?;
        row.set_item("seeds", result.per_seed.len())?;
        table.set_item(result.variant.name(), row)?;
    }
    Ok(table)
}

#[pymodule]
fn specmerge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(thin_svd, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(class_count_weights, m)?)?;
    m.add_function(wrap_pyfunction!(merge_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(step_proportions, m)?)?;
    m.add_function(wrap_pyfunction!(allocate_classes, m)?)?;
    m.add_function(wrap_pyfunction!(longtail_counts, m)?)?;
    m.add_function(wrap_pyfunction!(balanced_logits, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_average_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(run_continual, m)?)?;
    m.add_function(wrap_pyfunction!(run_ablation, m)?)?;
    Ok(())
}
