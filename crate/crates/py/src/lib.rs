//! Python bindings: configuration, formulas, the allocation environment,
//! baselines and training.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ::risurllc::env::{action_len, state_len, Env as CoreEnv};
use ::risurllc::harness::{self, Comparator};
use ::risurllc::rng::{substream, Domain, StreamRng};
use ::risurllc::scenario::{self, load_config_with_profile, Profile};

fn to_py(e: ::risurllc::Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Validated configuration, built from a TOML document over a profile.
#[pyclass(module = "risurllc", from_py_object)]
#[derive(Clone)]
struct Config {
    inner: scenario::Config,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (toml = "", profile = "desk"))]
    fn new(toml: &str, profile: &str) -> PyResult<Self> {
        let profile: Profile = profile.parse().map_err(to_py)?;
        Ok(Config { inner: load_config_with_profile(toml, profile).map_err(to_py)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn hash(&self) -> String {
        harness::config_hash(&self.inner)
    }

    #[getter]
    fn state_len(&self) -> usize {
        state_len(&self.inner.scenario)
    }

    #[getter]
    fn action_len(&self) -> usize {
        action_len(&self.inner.scenario)
    }

    #[getter]
    fn noise_power(&self) -> f64 {
        scenario::noise_power(&self.inner.scenario)
    }
}

/// Achievable bits at blocklength `c` and error probability `eps`.
#[pyfunction]
fn fbl_bits(sinr: f64, c: f64, eps: f64) -> f64 {
    ::risurllc::fbl::fbl_bits(sinr, c, eps)
}

#[pyfunction]
fn q_inv(p: f64) -> PyResult<f64> {
    ::risurllc::fbl::q_inv(p).map_err(to_py)
}

#[pyfunction]
fn dispersion(sinr: f64) -> f64 {
    ::risurllc::fbl::dispersion(sinr)
}

#[pyfunction]
fn amplitude_response(theta: f64, beta_min: f64, alpha: f64, phi: f64) -> f64 {
    ::risurllc::ris::amplitude_response(theta, beta_min, alpha, phi)
}

/// Episodic environment; `step` returns `(state, reward, objective, shannon, done)`.
#[pyclass(module = "risurllc", unsendable)]
struct Env {
    inner: CoreEnv,
    rng: StreamRng,
}

#[pymethods]
impl Env {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: &Config, seed: u64) -> PyResult<Self> {
        let c = &config.inner;
        let inner = CoreEnv::new(c.scenario.clone(), c.learn.cbl_mode, c.learn.reward_scale, c.learn.n_steps)
            .map_err(to_py)?;
        Ok(Env { inner, rng: substream(seed, Domain::Episode, 0) })
    }

    fn reset(&mut self) -> PyResult<Vec<f64>> {
        self.inner.reset(&mut self.rng).map_err(to_py)
    }

    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, f64, f64, bool)> {
        let out = self.inner.step(&action).map_err(to_py)?;
        Ok((out.state, out.reward, out.objective, out.shannon, self.inner.is_done()))
    }

    /// Blocklengths of the current decision.
    fn blocklengths(&self) -> Option<Vec<u32>> {
        self.inner.decision().map(|d| d.c.clone())
    }
}

/// Per-realization `(fbl, shannon, leakage)` of a non-learning scheme.
#[pyfunction]
#[pyo3(signature = (config, scheme, realizations, seed = 0))]
fn baseline(config: &Config, scheme: &str, realizations: usize, seed: u64) -> PyResult<Vec<(f64, f64, f64)>> {
    let scheme: Comparator = scheme.parse().map_err(to_py)?;
    if scheme.is_learned() {
        return Err(PyValueError::new_err(format!("`{scheme}` is a learned scheme")));
    }
    let scores = harness::comparator_scores(&config.inner, scheme, seed, realizations).map_err(to_py)?;
    Ok(scores.into_iter().map(|s| (s.fbl, s.shannon, s.leakage)).collect())
}

/// Trains and writes the run files into `out`; returns the mean evaluation objective.
#[pyfunction]
#[pyo3(signature = (config, out, seed = 0))]
fn train(py: Python<'_>, config: &Config, out: PathBuf, seed: u64) -> PyResult<f64> {
    let cfg = config.inner.clone();
    let res = py.detach(move || harness::cmd_train(&cfg, seed, &out));
    Ok(res.map_err(to_py)?.mean_eval)
}

#[pymodule]
#[pyo3(name = "risurllc")]
fn py_risurllc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<Env>()?;
    m.add_function(wrap_pyfunction!(fbl_bits, m)?)?;
    m.add_function(wrap_pyfunction!(q_inv, m)?)?;
    m.add_function(wrap_pyfunction!(dispersion, m)?)?;
    m.add_function(wrap_pyfunction!(amplitude_response, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
