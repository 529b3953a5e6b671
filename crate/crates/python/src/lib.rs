//! Python bindings: scenarios, Monte Carlo and large-scale SINR evaluation,
//! the fixed-point solver, the oracle suite and the sweep runner.

use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use mimo_sim::cli::best_beta::best_beta as select_best_beta;
use mimo_sim::cli::config::ExperimentConfig;
use mimo_sim::cli::results::read_rows;
use mimo_sim::cli::runner;
use mimo_sim::cli::validate::{run_suite as run_oracle_suite, SuiteOptions};
use mimo_sim::geometry::{build_hex_network, ShadowingModel};
use mimo_sim::mc_eval::{evaluate as mc_evaluate, McConfig, SeReport};
use mimo_sim::precoding::{Scheme, SmmseRegularizer};
use mimo_sim::rmt::{
    large_scale_sinr_with, scalar_fixed_point as solve_scalar, DeOptions, DePath, FixedPointConfig,
};
use mimo_sim::{Error, Scenario, SystemParams};

create_exception!(mimo_sim_py, NumericalError, PyArithmeticError);

fn to_py_err(e: Error) -> PyErr {
    match e {
        e if e.is_numerical() => NumericalError::new_err(e.to_string()),
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for mimo_sim::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

fn rows(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn parse_serde<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} '{s}'")))
}

/// System parameters of one network; defaults are the reference setup.
#[pyclass(name = "SystemParams", module = "mimo_sim_py", skip_from_py_object)]
#[derive(Clone)]
struct PySystemParams {
    inner: SystemParams,
}

#[pymethods]
impl PySystemParams {
    #[new]
    #[pyo3(signature = (
        antennas = 100,
        users_per_cell = 10,
        beta = 4,
        beta_f = 0.0,
        coherence_symbols = 500,
        radius_m = 500.0,
        kappa = 3.7,
        sigma_sf_sq = 5.0,
        rho_ul_db = 0.0,
        edge_snr_db = -3.0,
        smmse_regularizer = "full",
        shadowing = "per-link",
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        antennas: usize,
        users_per_cell: usize,
        beta: usize,
        beta_f: f64,
        coherence_symbols: usize,
        radius_m: f64,
        kappa: f64,
        sigma_sf_sq: f64,
        rho_ul_db: f64,
        edge_snr_db: f64,
        smmse_regularizer: &str,
        shadowing: &str,
    ) -> PyResult<Self> {
        let inner = SystemParams {
            antennas,
            users_per_cell,
            beta,
            beta_f,
            coherence_symbols,
            radius_m,
            kappa,
            sigma_sf_sq,
            rho_ul_db,
            edge_snr_db,
            smmse_regularizer: parse_serde::<SmmseRegularizer>(
                "S-MMSE regularizer",
                smmse_regularizer,
            )?,
            shadowing: parse_serde::<ShadowingModel>("shadowing model", shadowing)?,
            ..Default::default()
        };
        inner.validate().py_err()?;
        Ok(Self { inner })
    }

    #[getter]
    fn antennas(&self) -> usize {
        self.inner.antennas
    }

    #[getter]
    fn users_per_cell(&self) -> usize {
        self.inner.users_per_cell
    }

    #[getter]
    fn beta(&self) -> usize {
        self.inner.beta
    }

    #[getter]
    fn beta_f(&self) -> f64 {
        self.inner.beta_f
    }

    #[getter]
    fn pilot_length(&self) -> PyResult<usize> {
        self.inner.pilot_length().py_err()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "SystemParams(antennas={}, users_per_cell={}, beta={}, beta_f={})",
            p.antennas, p.users_per_cell, p.beta, p.beta_f
        )
    }
}

/// SINR and SE of every user (`[cell][user]`).
#[pyclass(name = "SeReport", module = "mimo_sim_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySeReport {
    inner: SeReport,
}

#[pymethods]
impl PySeReport {
    #[getter]
    fn sinr(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.sinr)
    }

    #[getter]
    fn se(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.se)
    }

    #[getter]
    fn sum_se_per_cell(&self) -> Vec<f64> {
        self.inner.sum_se_per_cell.clone()
    }

    #[getter]
    fn prelog(&self) -> f64 {
        self.inner.prelog
    }

    fn mean_sum_se(&self) -> f64 {
        self.inner.mean_sum_se()
    }

    fn center_sum_se(&self) -> f64 {
        self.inner.center_sum_se()
    }

    #[pyo3(signature = (qs = vec![0.05, 0.5, 0.95]))]
    fn user_se_quantiles(&self, qs: Vec<f64>) -> Vec<f64> {
        self.inner.user_se_quantiles(&qs)
    }

    fn __repr__(&self) -> String {
        format!(
            "SeReport(mean_sum_se={:.4}, prelog={})",
            self.inner.mean_sum_se(),
            self.inner.prelog
        )
    }
}

/// One drop of the 19-cell network with its pilots and powers.
#[pyclass(name = "Scenario", module = "mimo_sim_py", frozen, skip_from_py_object)]
struct PyScenario {
    inner: Scenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn generate(params: PyRef<'_, PySystemParams>, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: Scenario::generate(&params.inner, seed).py_err()?,
        })
    }

    #[getter]
    fn cells(&self) -> usize {
        self.inner.cells()
    }

    #[getter]
    fn users_per_cell(&self) -> usize {
        self.inner.users_per_cell()
    }

    #[getter]
    fn antennas(&self) -> usize {
        self.inner.antennas()
    }

    #[getter]
    fn pilot_length(&self) -> usize {
        self.inner.pilot_length()
    }

    #[getter]
    fn prelog(&self) -> f64 {
        self.inner.prelog()
    }

    /// Large-scale gains `d_j(z_lk)` as `[j][l][k]`.
    fn gains(&self) -> Vec<Vec<Vec<f64>>> {
        let g = &self.inner.drop.gains;
        g.outer_iter().map(|a| rows(&a.to_owned())).collect()
    }

    /// Pilot index of every user as `[l][k]`.
    fn pilots(&self) -> Vec<Vec<usize>> {
        let a = &self.inner.alloc;
        (0..a.cells())
            .map(|l| (0..a.users_per_cell).map(|k| a.pilot(l, k)).collect())
            .collect()
    }

    fn pilot_powers(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.powers.p)
    }

    fn allocation_json(&self) -> PyResult<String> {
        self.inner.alloc.to_json().py_err()
    }

    fn geometry_json(&self) -> PyResult<String> {
        build_hex_network(self.inner.params.radius_m)
            .and_then(|n| n.to_json())
            .py_err()
    }

    /// Monte Carlo reports, one per scheme, on shared realizations.
    #[pyo3(signature = (schemes, realizations = 1000, seed = 0))]
    fn evaluate(
        &self,
        py: Python<'_>,
        schemes: Vec<String>,
        realizations: usize,
        seed: u64,
    ) -> PyResult<Vec<PySeReport>> {
        let parsed = schemes
            .iter()
            .map(|s| s.parse::<Scheme>())
            .collect::<mimo_sim::Result<Vec<_>>>()
            .py_err()?;
        let reports = py
            .detach(|| mc_evaluate(&self.inner, &parsed, &McConfig::new(realizations, seed)))
            .py_err()?;
        Ok(reports
            .into_iter()
            .map(|inner| PySeReport { inner })
            .collect())
    }

    /// Large-scale (deterministic-equivalent) M-MMSE report.
    #[pyo3(signature = (same_pilot_errors = false, general_path = false))]
    fn large_scale_sinr(
        &self,
        same_pilot_errors: bool,
        general_path: bool,
    ) -> PyResult<PySeReport> {
        let opts = DeOptions {
            path: if general_path {
                DePath::General
            } else {
                DePath::Scalar
            },
            cfg: FixedPointConfig::default(),
            same_pilot_errors,
        };
        let de = large_scale_sinr_with(&self.inner, &opts).py_err()?;
        Ok(PySeReport {
            inner: de.se_report(self.inner.prelog()).py_err()?,
        })
    }
}

/// `(delta, t, iterations)` of the fixed point for covariances `c_b I`.
#[pyfunction]
#[pyo3(signature = (c, rho, m, rel_tol = 1e-10, max_iter = 10_000))]
fn scalar_fixed_point(
    c: Vec<f64>,
    rho: f64,
    m: usize,
    rel_tol: f64,
    max_iter: usize,
) -> PyResult<(Vec<f64>, f64, usize)> {
    solve_scalar(&c, rho, m, &FixedPointConfig { rel_tol, max_iter }).py_err()
}

/// Built-in oracle suite as `(name, measured, threshold, passed, detail)`.
#[pyfunction]
#[pyo3(signature = (seed = 1, realizations = 500, tamper = false))]
fn run_suite(
    py: Python<'_>,
    seed: u64,
    realizations: usize,
    tamper: bool,
) -> PyResult<Vec<(String, f64, f64, bool, String)>> {
    let opts = SuiteOptions {
        seed,
        realizations,
        tamper,
        ..Default::default()
    };
    let checks = py.detach(|| run_oracle_suite(&opts)).py_err()?;
    Ok(checks
        .into_iter()
        .map(|c| {
            (
                c.name.to_owned(),
                c.measured,
                c.threshold,
                c.passed,
                c.detail,
            )
        })
        .collect())
}

/// Checks an experiment config given as JSON text; raises on error.
#[pyfunction]
fn validate_config(config_json: &str) -> PyResult<()> {
    ExperimentConfig::from_json(config_json)
        .and_then(|c| c.validate())
        .py_err()
}

/// Runs a sweep and returns the number of rows written.
#[pyfunction]
#[pyo3(signature = (config_json, output_dir = None))]
fn run_experiment(
    py: Python<'_>,
    config_json: &str,
    output_dir: Option<std::path::PathBuf>,
) -> PyResult<usize> {
    let cfg = ExperimentConfig::from_json(config_json).py_err()?;
    let dir = output_dir.unwrap_or_else(|| cfg.output_dir());
    let out = py.detach(|| runner::run_in(&cfg, &dir)).py_err()?;
    Ok(out.rows)
}

/// Best reuse factor per `(scheme, M, K, beta_f)` from a results CSV, as
/// `(scheme, M, K, beta_f, best_beta, sum_se)`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn best_beta(
    results_csv: std::path::PathBuf,
) -> PyResult<Vec<(String, usize, usize, f64, Option<usize>, Option<f64>)>> {
    let rows = read_rows(&results_csv).py_err()?;
    let sel = select_best_beta(&rows).py_err()?;
    Ok(sel
        .into_iter()
        .map(|b| {
            (
                b.scheme,
                b.antennas,
                b.users_per_cell,
                b.beta_f,
                b.best_beta,
                b.sum_se,
            )
        })
        .collect())
}

#[pymodule]
fn mimo_sim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<PySystemParams>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PySeReport>()?;
    m.add_function(wrap_pyfunction!(scalar_fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(best_beta, m)?)?;
    Ok(())
}
