//! Python bindings for the `dbfgs` simulator.

use dbfgs::cli::default_stepsize;
use dbfgs::engine_async::ScheduleParams;
use dbfgs::engine_sync::Method;
use dbfgs::experiments::{run_trials, trace_for, ExchangeUnit, TrialConfig, TrialSummary};
use dbfgs::problem::{exact_optimum as optimum, generate_quadratic_with, ConditionRegime};
use dbfgs::topology::regular_cycle;
use dbfgs::trace::Trace;
use dbfgs::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(dbfgs_py, DivergenceError, PyRuntimeError);
create_exception!(dbfgs_py, StalenessError, PyRuntimeError);

fn to_py(err: Error) -> PyErr {
    let msg = err.to_string();
    match err {
        Error::Divergence { .. } | Error::NotPositiveDefinite { .. } => DivergenceError::new_err(msg),
        Error::Staleness { .. } => StalenessError::new_err(msg),
        Error::Io(_) => PyOSError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

#[allow(clippy::too_many_arguments)]
fn trial_config(
    method: &str,
    n: usize,
    p: usize,
    degree: usize,
    cond: &str,
    eps: Option<f64>,
    gamma: f64,
    big_gamma: f64,
    iters: Option<usize>,
    threshold: Option<f64>,
    asynchronous: bool,
    mu_d: f64,
    sigma_d: f64,
    b_bound: usize,
) -> PyResult<TrialConfig> {
    let method: Method = parse(method)?;
    let schedule = asynchronous.then(|| ScheduleParams {
        mean_gap: mu_d,
        std_gap: sigma_d,
        b_bound,
        ..ScheduleParams::default()
    });
    Ok(TrialConfig {
        n,
        p,
        degree,
        regime: parse(cond)?,
        method,
        stepsize: eps.unwrap_or_else(|| default_stepsize(method, asynchronous)),
        gamma,
        big_gamma,
        max_iters: iters.unwrap_or(if asynchronous { 5000 } else { 500 }),
        threshold: threshold.unwrap_or(f64::INFINITY),
        schedule,
        unit: if asynchronous {
            ExchangeUnit::Messages
        } else {
            ExchangeUnit::Rounds
        },
        ..TrialConfig::default()
    })
}

fn trace_columns<'py>(py: Python<'py>, trace: &Trace) -> PyResult<Bound<'py, PyDict>> {
    let r = &trace.records;
    let d = PyDict::new(py);
    d.set_item("t", r.iter().map(|x| x.t).collect::<Vec<_>>())?;
    d.set_item("h", r.iter().map(|x| x.h).collect::<Vec<_>>())?;
    d.set_item("grad_norm", r.iter().map(|x| x.grad_norm).collect::<Vec<_>>())?;
    d.set_item("err", r.iter().map(|x| x.err).collect::<Vec<_>>())?;
    d.set_item("comm_rounds", r.iter().map(|x| x.comm_rounds).collect::<Vec<_>>())?;
    d.set_item("comm_msgs", r.iter().map(|x| x.comm_msgs).collect::<Vec<_>>())?;
    d.set_item("skips", r.iter().map(|x| x.skips).collect::<Vec<_>>())?;
    if trace.is_async() {
        d.set_item("delivered_msgs", r.iter().map(|x| x.delivered_msgs).collect::<Vec<_>>())?;
        d.set_item("max_staleness", r.iter().map(|x| x.max_staleness).collect::<Vec<_>>())?;
    }
    Ok(d)
}

fn summary_dict<'py>(py: Python<'py>, s: &TrialSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("seed", s.seed)?;
    d.set_item("method", s.method.name())?;
    d.set_item("converged", s.converged)?;
    d.set_item("iters", s.iters)?;
    d.set_item("exchanges", s.exchanges)?;
    d.set_item("final_err", s.final_err)?;
    d.set_item("skips", s.skips)?;
    d.set_item("diverged", s.diverged)?;
    Ok(d)
}

/// Run one simulation and return the trace as a dict of columns.
#[pyfunction]
#[pyo3(signature = (
    method = "dbfgs", *, n = 50, p = 4, degree = 4, cond = "1e2", eps = None, gamma = 1e-2,
    big_gamma = 1e-3, iters = None, threshold = None, seed = 0, asynchronous = false,
    mu_d = 3.0, sigma_d = 1.0, b_bound = 12
))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    method: &str,
    n: usize,
    p: usize,
    degree: usize,
    cond: &str,
    eps: Option<f64>,
    gamma: f64,
    big_gamma: f64,
    iters: Option<usize>,
    threshold: Option<f64>,
    seed: u64,
    asynchronous: bool,
    mu_d: f64,
    sigma_d: f64,
    b_bound: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = trial_config(
        method,
        n,
        p,
        degree,
        cond,
        eps,
        gamma,
        big_gamma,
        iters,
        threshold,
        asynchronous,
        mu_d,
        sigma_d,
        b_bound,
    )?;
    let trace = py
        .detach(|| {
            let prob = generate_quadratic_with(cfg.n, cfg.p, seed, cfg.regime)?;
            let graph = regular_cycle(cfg.n, cfg.degree)?;
            trace_for(&cfg, &prob, &graph, seed)
        })
        .map_err(to_py)?;
    trace_columns(py, &trace)
}

/// Run independent trials over `seeds` and return one summary dict per seed.
#[pyfunction]
#[pyo3(signature = (
    seeds, method = "dbfgs", *, n = 50, p = 4, degree = 4, cond = "1e2", eps = None, gamma = 1e-2,
    big_gamma = 1e-3, iters = None, threshold = None, asynchronous = false,
    mu_d = 3.0, sigma_d = 1.0, b_bound = 12
))]
#[allow(clippy::too_many_arguments)]
fn trials<'py>(
    py: Python<'py>,
    seeds: Vec<u64>,
    method: &str,
    n: usize,
    p: usize,
    degree: usize,
    cond: &str,
    eps: Option<f64>,
    gamma: f64,
    big_gamma: f64,
    iters: Option<usize>,
    threshold: Option<f64>,
    asynchronous: bool,
    mu_d: f64,
    sigma_d: f64,
    b_bound: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let default_th = if asynchronous { 5e-2 } else { 1e-2 };
    let cfg = trial_config(
        method,
        n,
        p,
        degree,
        cond,
        eps,
        gamma,
        big_gamma,
        Some(iters.unwrap_or(if asynchronous { 20_000 } else { 5000 })),
        Some(threshold.unwrap_or(default_th)),
        asynchronous,
        mu_d,
        sigma_d,
        b_bound,
    )?;
    let report = py.detach(|| run_trials(&cfg, &seeds, 10.0)).map_err(to_py)?;
    report.summaries.iter().map(|s| summary_dict(py, s)).collect()
}

/// Stacked centralized optimum of a generated instance.
#[pyfunction]
#[pyo3(signature = (n = 50, p = 4, seed = 0, cond = "1e2"))]
fn exact_optimum(n: usize, p: usize, seed: u64, cond: &str) -> PyResult<Vec<f64>> {
    let regime: ConditionRegime = parse(cond)?;
    let prob = generate_quadratic_with(n, p, seed, regime).map_err(to_py)?;
    Ok(optimum(&prob).map_err(to_py)?.iter().copied().collect())
}

/// JSON description of a generated instance.
#[pyfunction]
#[pyo3(signature = (n = 50, p = 4, seed = 0, cond = "1e2"))]
fn problem_json(n: usize, p: usize, seed: u64, cond: &str) -> PyResult<String> {
    let regime: ConditionRegime = parse(cond)?;
    generate_quadratic_with(n, p, seed, regime)
        .and_then(|prob| prob.to_json())
        .map_err(to_py)
}

#[pymodule]
fn dbfgs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("DivergenceError", m.py().get_type::<DivergenceError>())?;
    m.add("StalenessError", m.py().get_type::<StalenessError>())?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(trials, m)?)?;
    m.add_function(wrap_pyfunction!(exact_optimum, m)?)?;
    m.add_function(wrap_pyfunction!(problem_json, m)?)?;
    Ok(())
}
