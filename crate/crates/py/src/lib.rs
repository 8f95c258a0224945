//! Python bindings. Types are passed as lists of `(id, u, c, mass)`
//! tuples and results come back as dicts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use upkeep::oracle::{lp_screening_welfare, primal_grid_welfare, GridSpec, PrimalMode};
use upkeep::participation::solve_participation;
use upkeep::screening::solve_screening;
use upkeep::sim::{build_policy, check_reduced_form, simulate, Microfoundation};
use upkeep::{check_feasible, solve_first_best, ConstraintFamily, Error, Mechanism, PhysicalParams, TypeDistribution};

type Row = (String, f64, f64, f64);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Degenerate(_) | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn types(rows: Vec<Row>) -> PyResult<TypeDistribution> {
    TypeDistribution::from_tuples(rows).map_err(py_err)
}

fn mechanism_dict<'py>(
    py: Python<'py>,
    y: f64,
    w: f64,
    m: &Mechanism,
    classes: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("y", y)?;
    out.set_item("uptime", m.uptime)?;
    out.set_item("welfare", w)?;
    out.set_item("usage", m.usage.clone())?;
    out.set_item("contribution", m.contribution.clone())?;
    out.set_item("classes", classes)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (rows, rho, tol = 1e-9))]
fn first_best<'py>(py: Python<'py>, rows: Vec<Row>, rho: f64, tol: f64) -> PyResult<Bound<'py, PyDict>> {
    let d = types(rows)?;
    let s = solve_first_best(&d, rho, tol).map_err(py_err)?;
    let classes = s.mechanism.contribution.iter().map(|p| if *p > 0.0 { "FULL" } else { "NONE" }.to_owned()).collect();
    mechanism_dict(py, s.y_fb, s.w_fb, &s.mechanism, classes)
}

#[pyfunction]
#[pyo3(signature = (rows, rho, tol = 1e-9))]
fn participation<'py>(py: Python<'py>, rows: Vec<Row>, rho: f64, tol: f64) -> PyResult<Bound<'py, PyDict>> {
    let d = types(rows)?;
    let s = solve_participation(&d, rho, tol).map_err(py_err)?;
    let classes = s.classes.iter().map(|c| c.to_string()).collect();
    mechanism_dict(py, s.y_star.value(), s.w_star, &s.mechanism, classes)
}

#[pyfunction]
#[pyo3(signature = (rows, rho, tol = 1e-9))]
fn screening<'py>(py: Python<'py>, rows: Vec<Row>, rho: f64, tol: f64) -> PyResult<Bound<'py, PyDict>> {
    let d = types(rows)?;
    let s = solve_screening(&d, rho, tol).map_err(py_err)?;
    let classes = s.assignment.iter().map(|a| a.map_or("OUT".to_owned(), |k| format!("TIER{}", k + 1))).collect();
    mechanism_dict(py, s.y_star.value(), s.w_star, &s.mechanism, classes)
}

/// Names of the constraint families that fail at `tol`.
#[pyfunction]
#[pyo3(signature = (rows, rho, uptime, usage, contribution, tol = 1e-9))]
fn infeasible(
    rows: Vec<Row>,
    rho: f64,
    uptime: f64,
    usage: Vec<f64>,
    contribution: Vec<f64>,
    tol: f64,
) -> PyResult<Vec<String>> {
    let d = types(rows)?;
    if usage.len() != d.len() || contribution.len() != d.len() {
        return Err(PyValueError::new_err("usage and contribution need one entry per type"));
    }
    let m = Mechanism::new(uptime, usage, contribution);
    let rep = check_feasible(&m, &d, rho, &ConstraintFamily::ALL, tol);
    Ok(rep.failures().iter().map(|f| format!("{f:?}").to_lowercase()).collect())
}

/// Reference welfare from the brute-force oracles: `mode` is one of
/// `"fb"`, `"part"` or `"ic"`.
#[pyfunction]
#[pyo3(signature = (rows, rho, mode, q_points = 2001))]
fn oracle_welfare(rows: Vec<Row>, rho: f64, mode: &str, q_points: usize) -> PyResult<f64> {
    let d = types(rows)?;
    let grid = GridSpec::new(q_points, 3, 1e-9).map_err(py_err)?;
    let g = match mode {
        "fb" => primal_grid_welfare(&d, rho, PrimalMode::FirstBest, grid),
        "part" => primal_grid_welfare(&d, rho, PrimalMode::Participation, grid),
        "ic" => lp_screening_welfare(&d, rho, grid),
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    Ok(g.map_err(py_err)?.welfare)
}

/// Simulates the Markov policy implementing a mechanism and returns the
/// estimates together with the reduced-form verdict at `sigma_mult`.
#[pyfunction]
#[pyo3(signature = (rows, rho, uptime, usage, contribution, horizon, seed, kind = "poisson", sigma_mult = 4.0))]
#[allow(clippy::too_many_arguments)]
fn simulate_mechanism<'py>(
    py: Python<'py>,
    rows: Vec<Row>,
    rho: f64,
    uptime: f64,
    usage: Vec<f64>,
    contribution: Vec<f64>,
    horizon: f64,
    seed: u64,
    kind: &str,
    sigma_mult: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let d = types(rows)?;
    let kind = match kind {
        "poisson" => Microfoundation::Poisson,
        "fluid" => Microfoundation::Fluid,
        other => return Err(PyValueError::new_err(format!("unknown simulator {other:?}"))),
    };
    if usage.len() != d.len() || contribution.len() != d.len() {
        return Err(PyValueError::new_err("usage and contribution need one entry per type"));
    }
    let m = Mechanism::new(uptime, usage, contribution);
    let phys = PhysicalParams::new(rho).map_err(py_err)?;
    let stats = py
        .detach(|| simulate(kind, &build_policy(&m), &d, &phys, horizon, Some(seed), 0, None))
        .map_err(py_err)?;
    let rep = check_reduced_form(&stats, &m, sigma_mult).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("uptime", (stats.q_hat, stats.q_ci))?;
    out.set_item("usage", stats.r_hat.iter().copied().zip(stats.r_ci.iter().copied()).collect::<Vec<_>>())?;
    out.set_item("contribution", stats.p_hat.iter().copied().zip(stats.p_ci.iter().copied()).collect::<Vec<_>>())?;
    out.set_item("break_rate", (stats.break_rate, stats.break_rate_ci))?;
    out.set_item("n_breaks", stats.n_breaks)?;
    out.set_item("admissible", stats.admissibility.all())?;
    out.set_item("balance_gap", (rep.balance_gap, rep.balance_ci))?;
    out.set_item("passes", rep.passes())?;
    Ok(out)
}

#[pymodule]
fn pyupkeep(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(first_best, m)?)?;
    m.add_function(wrap_pyfunction!(participation, m)?)?;
    m.add_function(wrap_pyfunction!(screening, m)?)?;
    m.add_function(wrap_pyfunction!(infeasible, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_welfare, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_mechanism, m)?)?;
    Ok(())
}
