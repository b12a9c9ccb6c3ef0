//! Python bindings for `couplex`.

use ::couplex::coupling::draw_coupled_pairs;
use ::couplex::oracle;
use ::couplex::{build_maximal_coupling, exact_md_finite_chain, DiscreteDistribution, FiniteChain};
use couplex_cli::{execute, ExperimentConfig, Operation};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(format!("{e:#}"))
}

fn law(p: Vec<f64>) -> PyResult<DiscreteDistribution> {
    DiscreteDistribution::from_probabilities(p).map_err(err)
}

/// Total variation distance between two probability vectors.
#[pyfunction]
fn tv_exact(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    ::couplex::tv_exact(&law(p)?, &law(q)?).map_err(err)
}

/// Maximal coupling of two probability vectors.
#[pyclass(module = "couplex")]
struct MaximalCoupling {
    inner: ::couplex::coupling::MaximalCouplingSampler,
}

#[pymethods]
impl MaximalCoupling {
    #[new]
    fn new(p1: Vec<f64>, p2: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: build_maximal_coupling(&law(p1)?, &law(p2)?).map_err(err)? })
    }

    /// Overlap mass.
    #[getter]
    fn q(&self) -> f64 {
        self.inner.q()
    }

    /// Marginal masses of component `j` (1 or 2) rebuilt from the mixture.
    fn mixture_masses(&self, j: usize) -> PyResult<Vec<f64>> {
        if j != 1 && j != 2 {
            return Err(PyValueError::new_err("j must be 1 or 2"));
        }
        Ok(self.inner.mixture_masses(j))
    }

    /// `n` coupled draws as `(first, second)` cell pairs.
    #[pyo3(signature = (n, seed, substream = 0))]
    fn sample(&self, py: Python<'_>, n: usize, seed: u64, substream: u64) -> Vec<(usize, usize)> {
        py.detach(|| draw_coupled_pairs(&self.inner, n, seed, substream).into_iter().map(|r| (r.first, r.second)).collect())
    }
}

/// Overlap of N(m1, s^2) and N(m2, s^2).
#[pyfunction]
fn gaussian_overlap(m1: f64, m2: f64, s: f64) -> PyResult<f64> {
    oracle::gaussian_overlap(m1, m2, s).map_err(err)
}

/// TV distance between two univariate Gaussians.
#[pyfunction]
fn gaussian_tv(m1: f64, s1: f64, m2: f64, s2: f64) -> PyResult<f64> {
    oracle::gaussian_tv(m1, s1, m2, s2).map_err(err)
}

/// Exit law of planar Brownian motion from a disk, split into equal arcs.
#[pyfunction]
fn poisson_cell_masses(x: Vec<f64>, r: f64, bins: usize) -> PyResult<Vec<f64>> {
    oracle::poisson_cell_masses(&x, r, bins).map_err(err)
}

/// Exact MD coefficient of a finite chain between state sets.
#[pyfunction]
fn chain_md(kernel: Vec<Vec<f64>>, d: Vec<usize>, d_prime: Vec<usize>) -> PyResult<f64> {
    exact_md_finite_chain(&kernel, &d, &d_prime).map_err(err)
}

/// Law of a finite chain after `t` steps.
#[pyfunction]
fn chain_marginal(kernel: Vec<Vec<f64>>, initial: Vec<f64>, t: u64) -> PyResult<Vec<f64>> {
    let chain = FiniteChain::new(kernel).map_err(err)?;
    oracle::chain_marginal(&chain, &initial, t).map_err(err)
}

/// Runs a CLI command on a TOML config string and returns the JSON report.
#[pyfunction]
#[pyo3(signature = (command, config, seed = None))]
fn run(py: Python<'_>, command: &str, config: &str, seed: Option<u64>) -> PyResult<String> {
    let op = Operation::parse(command).map_err(err)?;
    let mut cfg = ExperimentConfig::parse(config).map_err(err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    py.detach(|| execute(op, &cfg, 1.0)).map_err(err)?.0.to_json().map_err(err)
}

#[pymodule]
#[pyo3(name = "couplex")]
fn couplex_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<MaximalCoupling>()?;
    m.add_function(wrap_pyfunction!(tv_exact, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_overlap, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_tv, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_cell_masses, m)?)?;
    m.add_function(wrap_pyfunction!(chain_md, m)?)?;
    m.add_function(wrap_pyfunction!(chain_marginal, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
