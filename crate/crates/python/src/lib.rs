//! Python bindings: run scenarios and query the parameter algebra.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use katolab::config::{CheckName, ScenarioConfig, SweepAxis};
use katolab::geometry::{build_geometry, ricci_minus_field};
use katolab::kato::KatoProfile;
use katolab::spectral::decompose;
use katolab::time_change::{select_parameters_d, select_parameters_dim2, select_parameters_dprime, BEParameters};
use katolab::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Eigen(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse(config: &str) -> PyResult<ScenarioConfig> {
    ScenarioConfig::from_toml(config).map_err(to_py)
}

/// Run a scenario given as TOML text and return the JSON report.
///
/// Relative paths in the config resolve against `base_dir`; with `out_dir`
/// the CSV curves and `report.json` are written as by the command line tool.
#[pyfunction]
#[pyo3(signature = (config, base_dir = None, out_dir = None, seed = None))]
fn analyze(
    py: Python<'_>,
    config: &str,
    base_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
) -> PyResult<String> {
    let mut cfg = parse(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let base = base_dir.unwrap_or_else(|| PathBuf::from("."));
    let outcome = py
        .detach(|| katolab::scenario::run_scenario(&cfg, &base, out_dir.as_deref()))
        .map_err(to_py)?;
    outcome.report.to_json().map_err(to_py)
}

/// Run one scenario per value of `axis` and return the table as JSON.
#[pyfunction]
#[pyo3(signature = (config, axis, values, base_dir = None, out_dir = None))]
fn sweep(
    py: Python<'_>,
    config: &str,
    axis: &str,
    values: Vec<f64>,
    base_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> PyResult<String> {
    let cfg = parse(config)?;
    let axis: SweepAxis = axis.parse().map_err(to_py)?;
    let base = base_dir.unwrap_or_else(|| PathBuf::from("."));
    let table = py
        .detach(|| katolab::scenario::sweep(&cfg, axis, &values, &base, out_dir.as_deref()))
        .map_err(to_py)?;
    serde_json::to_string_pretty(&table).map_err(|e| to_py(e.into()))
}

/// `(name, description)` for every check, in execution order.
#[pyfunction]
fn list_checks() -> Vec<(&'static str, &'static str)> {
    CheckName::ALL.iter().map(|c| (c.as_str(), c.description())).collect()
}

/// Kato profile `t ↦ k_t(Ric₋)` of the scenario geometry, as two lists.
#[pyfunction]
#[pyo3(signature = (config, base_dir = None))]
fn kato_profile(py: Python<'_>, config: &str, base_dir: Option<PathBuf>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let cfg = parse(config)?;
    let base = base_dir.unwrap_or_else(|| PathBuf::from("."));
    py.detach(|| {
        let spec = cfg.geometry.to_spec(Path::new(&base))?;
        let geom = build_geometry(&spec)?;
        let dec = decompose(&geom, None)?;
        let ric = ricci_minus_field(&geom);
        let times = KatoProfile::uniform_times(cfg.t_final, cfg.kato.samples);
        let p = KatoProfile::compute(&dec, &ric, &times, "ric_minus", geom.dimension())?;
        Ok((p.times, p.values))
    })
    .map_err(to_py)
}

/// Certificate parameters for a regime: `"D"` takes `gamma`, `"Dprime"` and
/// `"dim2"` take the measured Kato constant.
#[pyfunction]
fn select_parameters<'py>(
    py: Python<'py>,
    regime: &str,
    dimension: usize,
    value: f64,
    t_final: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p: BEParameters = match regime {
        "D" => select_parameters_d(dimension, value, t_final),
        "Dprime" => select_parameters_dprime(dimension, value, t_final),
        "dim2" => select_parameters_dim2(value, t_final),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown regime `{other}` (D, Dprime, dim2)"
            )))
        }
    }
    .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("K", p.k)?;
    d.set_item("N", p.n_upper)?;
    d.set_item("C", p.c)?;
    d.set_item("lambda", p.lambda)?;
    d.set_item("beta", p.beta)?;
    d.set_item("q", p.q)?;
    d.set_item("curvature_bound", p.curvature_bound())?;
    Ok(d)
}

#[pymodule]
pub fn pykatolab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SCHEMA_VERSION", katolab::report::SCHEMA_VERSION)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(list_checks, m)?)?;
    m.add_function(wrap_pyfunction!(kato_profile, m)?)?;
    m.add_function(wrap_pyfunction!(select_parameters, m)?)?;
    Ok(())
}
