//! Python bindings for the hypergraph generative-modeling library.

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hypergen::embedding::{EmbeddingSet, NodeParams};
use hypergen::eval::{self, PipelineConfig, ReferenceMode};
use hypergen::hypergraph::{self, HypergraphFormat};
use hypergen::lowrank;
use hypergen::mle;
use hypergen::rng::{stream_rng, Domain};
use hypergen::scorediff::{self, DiffusionSchedule, ScoreNet, Stepper, TrainConfig};
use hypergen::simulate::{self, SimConfig};

fn err(e: hypergen::Error) -> PyErr {
    match e {
        hypergen::Error::Config(_) | hypergen::Error::Validation(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

type Rows = Vec<Vec<f64>>;

fn matrix_to_rows(m: &Array2<f64>) -> Rows {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn rows_to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows have unequal lengths"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((nrows, ncols), flat)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_format(format: &str) -> PyResult<HypergraphFormat> {
    match format {
        "lines" => Ok(HypergraphFormat::Lines),
        "jsonl" => Ok(HypergraphFormat::Jsonl),
        other => Err(PyValueError::new_err(format!(
            "unknown format {other:?}; use \"lines\" or \"jsonl\""
        ))),
    }
}

/// A hypergraph: node count plus an ordered list of hyperlinks.
#[pyclass(name = "Hypergraph", from_py_object)]
#[derive(Clone)]
struct PyHypergraph {
    inner: hypergraph::Hypergraph,
}

#[pymethods]
impl PyHypergraph {
    #[new]
    fn new(n: usize, links: Vec<Vec<u32>>) -> PyResult<Self> {
        Ok(Self {
            inner: hypergraph::Hypergraph::from_raw_links(n, links),
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    fn links(&self) -> Vec<Vec<u32>> {
        self.inner.links().to_vec()
    }

    /// Normalized node frequencies and the indicator covariance matrix.
    fn cooccurrence_stats(&self) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let stats = hypergraph::cooccurrence_stats(&self.inner).map_err(err)?;
        Ok((stats.mean.to_vec(), matrix_to_rows(&stats.cov)))
    }

    /// Per-node degrees and the hyperlink order histogram.
    fn degree_summary(&self) -> (Vec<u64>, Vec<(usize, u64)>) {
        let d = hypergraph::degree_summary(&self.inner);
        (d.node_degrees, d.order_counts.into_iter().collect())
    }

    #[pyo3(signature = (path, format = "lines"))]
    fn save(&self, path: &str, format: &str) -> PyResult<()> {
        hypergraph::save_hypergraph(&self.inner, path, parse_format(format)?).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, format = "lines"))]
    fn load(path: &str, format: &str) -> PyResult<Self> {
        Ok(Self {
            inner: hypergraph::load_hypergraph(path, parse_format(format)?).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Hypergraph(n={}, m={})", self.inner.n(), self.inner.m())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// Constrained-MLE output: fitted embeddings and the likelihood trace.
#[pyclass(name = "MleFit")]
struct PyMleFit {
    #[pyo3(get)]
    x_hat: Vec<Vec<f64>>,
    #[pyo3(get)]
    z_hat: Vec<Vec<f64>>,
    #[pyo3(get)]
    alpha_hat: Vec<f64>,
    #[pyo3(get)]
    loglik_trace: Vec<f64>,
    #[pyo3(get)]
    max_constraint_violation: f64,
    #[pyo3(get)]
    c_mn: f64,
}

/// Draw the synthetic ground truth: returns the hypergraph, the hyperlink
/// embeddings, the node embeddings, and the degree parameters.
#[pyfunction]
#[pyo3(signature = (k, m, n, alpha_range, seed))]
fn simulate_ground_truth(
    k: usize,
    m: usize,
    n: usize,
    alpha_range: (f64, f64),
    seed: u64,
) -> PyResult<(PyHypergraph, Rows, Rows, Vec<f64>)> {
    let cfg = SimConfig::new(k, m, n, [alpha_range.0, alpha_range.1], seed).map_err(err)?;
    let (h, x, params) = simulate::generate_ground_truth(&cfg).map_err(err)?;
    Ok((
        PyHypergraph { inner: h },
        matrix_to_rows(x.matrix()),
        matrix_to_rows(params.z()),
        params.alpha().to_vec(),
    ))
}

/// Constrained maximum-likelihood fit of hyperlink/node embeddings.
#[pyfunction]
#[pyo3(signature = (h, k, max_outer_iters = 500, tol = 1e-6, seed = 0))]
fn fit_mle(
    py: Python<'_>,
    h: &PyHypergraph,
    k: usize,
    max_outer_iters: usize,
    tol: f64,
    seed: u64,
) -> PyResult<PyMleFit> {
    let mut cfg = mle::MleConfig::new(k);
    cfg.max_outer_iters = max_outer_iters;
    cfg.tol = tol;
    cfg.seed = seed;
    let inner = h.inner.clone();
    let fit = py
        .detach(move || mle::fit(&inner, &cfg))
        .map_err(err)?;
    Ok(PyMleFit {
        x_hat: matrix_to_rows(fit.x_hat.matrix()),
        z_hat: matrix_to_rows(fit.params_hat.z()),
        alpha_hat: fit.params_hat.alpha().to_vec(),
        loglik_trace: fit.loglik_trace,
        max_constraint_violation: fit.constraint_residuals.max_violation(),
        c_mn: fit.c_mn,
    })
}

/// Train the score network on embedding rows and sample new embeddings from
/// the reverse SDE.
#[pyfunction]
#[pyo3(signature = (rows, m_tilde, epochs = 300, n_steps = 100, seed = 0))]
fn diffuse_embeddings(
    py: Python<'_>,
    rows: Vec<Vec<f64>>,
    m_tilde: usize,
    epochs: usize,
    n_steps: usize,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let data = EmbeddingSet::new(rows_to_matrix(rows)?).map_err(err)?;
    let sched = DiffusionSchedule {
        t_end: 5.0,
        n_steps,
        t_min: 1e-3,
    };
    let train = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let out = py
        .detach(move || -> hypergen::Result<Array2<f64>> {
            let mut rng = stream_rng(seed, Domain::ScoreInit, 0);
            let mut net = ScoreNet::new(data.k(), &mut rng);
            scorediff::train_score(&data, &mut net, &sched, &train)?;
            let emb = scorediff::sample(
                &net,
                &sched,
                data.k(),
                m_tilde,
                seed,
                Stepper::ExponentialIntegrator,
            )?;
            Ok(emb.into_matrix())
        })
        .map_err(err)?;
    Ok(matrix_to_rows(&out))
}

/// Decode embeddings into hyperlinks through node parameters.
#[pyfunction]
fn decode_embeddings(
    rows: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    seed: u64,
) -> PyResult<PyHypergraph> {
    let emb = rows_to_matrix(rows)?;
    let params = NodeParams::new(rows_to_matrix(z)?, Array1::from(alpha)).map_err(err)?;
    Ok(PyHypergraph {
        inner: eval::decode_embeddings(&emb, &params, seed).map_err(err)?,
    })
}

/// Full pipeline on a simulated hypergraph; returns the generated hypergraph
/// and the evaluation report as a dict.
#[pyfunction]
#[pyo3(signature = (k, m, n, alpha_range, seed, m_tilde_multiplier = 32,
                    epochs = 300, n_steps = 100, reference = "oracle-sample"))]
#[allow(clippy::too_many_arguments)]
fn run_pipeline(
    py: Python<'_>,
    k: usize,
    m: usize,
    n: usize,
    alpha_range: (f64, f64),
    seed: u64,
    m_tilde_multiplier: usize,
    epochs: usize,
    n_steps: usize,
    reference: &str,
) -> PyResult<(PyHypergraph, Py<pyo3::types::PyDict>)> {
    let sim = SimConfig::new(k, m, n, [alpha_range.0, alpha_range.1], seed).map_err(err)?;
    let mut cfg = PipelineConfig::simulated(sim, seed);
    cfg.m_tilde_multiplier = m_tilde_multiplier;
    cfg.sched = DiffusionSchedule {
        t_end: 5.0,
        n_steps,
        t_min: 1e-3,
    };
    cfg.train = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    cfg.reference = match reference {
        "train-sample" => ReferenceMode::TrainSample,
        "oracle-sample" => ReferenceMode::OracleSample,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown reference mode {other:?}"
            )))
        }
    };
    let out = py.detach(move || eval::run_dde_pipeline(&cfg)).map_err(err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("method", &out.report.method)?;
    dict.set_item("rmse_mean", out.report.rmse_mean)?;
    dict.set_item("rmse_cov", out.report.rmse_cov)?;
    dict.set_item("duplicate_rate", out.report.duplicate_rate)?;
    dict.set_item("m_tilde", out.report.m_tilde)?;
    dict.set_item("wall_clock_secs", out.report.wall_clock_secs)?;
    Ok((
        PyHypergraph {
            inner: out.generated,
        },
        dict.into(),
    ))
}

/// RMSE of normalized node frequencies between two hypergraphs.
#[pyfunction]
fn rmse_means(gen: &PyHypergraph, reference: &PyHypergraph) -> PyResult<f64> {
    eval::rmse_means(&gen.inner, &reference.inner).map_err(err)
}

/// RMSE over the upper triangle of the indicator covariance matrices.
#[pyfunction]
fn rmse_covs(gen: &PyHypergraph, reference: &PyHypergraph) -> PyResult<f64> {
    eval::rmse_covs(&gen.inner, &reference.inner).map_err(err)
}

/// Fraction of generated hyperlinks that exactly duplicate a training one.
#[pyfunction]
fn duplicate_rate(gen: &PyHypergraph, train: &PyHypergraph) -> f64 {
    eval::duplicate_rate(&gen.inner, &train.inner)
}

/// Top-K SVD embedding of a continuous matrix: returns (X_hat, Z_hat).
#[pyfunction]
fn svd_embed(rows: Vec<Vec<f64>>, k: usize) -> PyResult<(Rows, Rows)> {
    let y = rows_to_matrix(rows)?;
    let fit = lowrank::svd_embed(&y, k).map_err(err)?;
    Ok((matrix_to_rows(&fit.x_hat), matrix_to_rows(&fit.z_hat)))
}

#[pymodule]
fn hypergen_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHypergraph>()?;
    m.add_class::<PyMleFit>()?;
    m.add_function(wrap_pyfunction!(simulate_ground_truth, m)?)?;
    m.add_function(wrap_pyfunction!(fit_mle, m)?)?;
    m.add_function(wrap_pyfunction!(diffuse_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(decode_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(rmse_means, m)?)?;
    m.add_function(wrap_pyfunction!(rmse_covs, m)?)?;
    m.add_function(wrap_pyfunction!(duplicate_rate, m)?)?;
    m.add_function(wrap_pyfunction!(svd_embed, m)?)?;
    Ok(())
}
