//! Python bindings: scenarios, training, evaluation and the reward terms.
//!
//! Structured results (reports, manifests) cross the boundary as JSON and are
//! decoded with Python's `json` module, so callers get plain dicts.

use std::path::Path;

use podscale::engine::{train, EngineConfig, PolicyKind, TrainedModels};
use podscale::harness::{run_experiment, DEFAULT_ITERATIONS};
use podscale::reward::{self, RewardParams};
use podscale::scenario::{builtin_names, Scenario};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

fn to_py_err(e: podscale::Error) -> PyErr {
    if e.is_config_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn config_from(config_toml: Option<&str>, policy: Option<&str>) -> PyResult<EngineConfig> {
    let mut cfg = match config_toml {
        Some(text) => EngineConfig::from_toml_str(text).map_err(to_py_err)?,
        None => EngineConfig::default(),
    };
    if let Some(p) = policy {
        cfg.policy = p.parse::<PolicyKind>().map_err(to_py_err)?;
    }
    Ok(cfg)
}

/// Names of the built-in scenarios.
#[pyfunction]
fn scenario_names() -> Vec<String> {
    builtin_names().into_iter().map(String::from).collect()
}

/// A built-in scenario (or scenario file) rendered as TOML.
#[pyfunction]
fn scenario_toml(name: &str) -> PyResult<String> {
    let s = Scenario::resolve(name).map_err(to_py_err)?;
    s.to_toml_string().map_err(to_py_err)
}

/// The default engine configuration for `policy`, as TOML.
#[pyfunction]
#[pyo3(signature = (policy = "heuristic"))]
fn default_config(policy: &str) -> PyResult<String> {
    config_from(None, Some(policy))?.to_toml_string().map_err(to_py_err)
}

/// Trains a model set and saves it to `out_dir`. Returns the manifest.
#[pyfunction]
#[pyo3(signature = (out_dir, seed, config_toml = None, policy = None, episodes = None))]
fn train_models<'py>(
    py: Python<'py>,
    out_dir: &str,
    seed: u64,
    config_toml: Option<&str>,
    policy: Option<&str>,
    episodes: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = config_from(config_toml, policy)?;
    cfg.seed = seed;
    if let Some(n) = episodes {
        cfg.episodes = n;
    }
    let models = py.detach(|| train(&cfg)).map_err(to_py_err)?;
    let dir = Path::new(out_dir);
    models.save(dir).map_err(to_py_err)?;
    let text = cfg.to_toml_string().map_err(to_py_err)?;
    std::fs::write(dir.join("config.toml"), text).map_err(|e| to_py_err(e.into()))?;
    let manifest = serde_json::to_string(&models.manifest)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &manifest)
}

/// Evaluates a policy on `scenario` over `iterations` seeded runs and returns
/// the KPI report. Learning policies need `models_dir`; its saved config is
/// used when `config_toml` is not given.
#[pyfunction]
#[pyo3(signature = (scenario, seed, iterations = DEFAULT_ITERATIONS, config_toml = None, policy = None, models_dir = None, out_dir = None))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    scenario: &str,
    seed: u64,
    iterations: usize,
    config_toml: Option<&str>,
    policy: Option<&str>,
    models_dir: Option<&str>,
    out_dir: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let saved = match (config_toml, models_dir) {
        (None, Some(dir)) => std::fs::read_to_string(Path::new(dir).join("config.toml")).ok(),
        _ => None,
    };
    let cfg = config_from(config_toml.or(saved.as_deref()), policy)?;
    let scenario = Scenario::resolve(scenario).map_err(to_py_err)?;
    let models = match models_dir {
        Some(dir) if cfg.policy.is_learning() => {
            Some(TrainedModels::load(Path::new(dir)).map_err(to_py_err)?)
        }
        _ => None,
    };
    let exp = py
        .detach(|| run_experiment(&cfg, models.as_ref(), &scenario, iterations, seed))
        .map_err(to_py_err)?;
    if let Some(dir) = out_dir {
        exp.write(Path::new(dir)).map_err(to_py_err)?;
    }
    let report =
        serde_json::to_string(&exp.report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &report)
}

/// Reward terms for one agent: `(rho, r_shared, r_total)`.
///
/// `services` lists `(priority, response_s)` for every active service.
#[pyfunction]
#[pyo3(signature = (eta, eta_prev, services, alpha = None, beta = None, shared_floor = None))]
fn reward_terms(
    eta: f64,
    eta_prev: f64,
    services: Vec<(u32, f64)>,
    alpha: Option<f64>,
    beta: Option<f64>,
    shared_floor: Option<f64>,
) -> PyResult<(f64, f64, f64)> {
    let mut params = RewardParams::default();
    if let Some(a) = alpha {
        params.alpha = a;
    }
    if let Some(b) = beta {
        params.beta = b;
    }
    params.shared_floor = shared_floor;
    params.validate().map_err(to_py_err)?;
    let omega = reward::weighted_response_time(services);
    let b = reward::breakdown(eta, eta_prev, omega, &params);
    Ok((b.rho, b.r_shared, b.r_total))
}

#[pymodule]
fn podscale_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(scenario_names, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_toml, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(train_models, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(reward_terms, m)?)?;
    Ok(())
}
