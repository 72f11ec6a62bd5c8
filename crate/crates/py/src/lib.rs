//! Python module `pyvoltctl`: case checks, power flow, scenario days with
//! the stub day-ahead agent, and the experiment harness.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use voltctl::env::{run_day, zero_policy, Env};
use voltctl::grid::{validate_network, Network};
use voltctl::harness::{evaluate_methods, ExperimentConfig};
use voltctl::llm::agent::{AdvisorConfig, LlmAgent};
use voltctl::llm::kb::KnowledgeBase;
use voltctl::llm::prompt::DeviceSpecs;
use voltctl::powerflow::{solve_powerflow, Injections};
use voltctl::scenario::{Scenario, ScenarioConfig, DAYS_PER_YEAR};
use voltctl::schedule::DaySchedule;

fn err(e: voltctl::Error) -> PyErr {
    match e {
        voltctl::Error::InvalidCase(_) | voltctl::Error::InvalidConfig(_) | voltctl::Error::InvalidSchedule(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn network(case_json: Option<&str>) -> PyResult<Network> {
    match case_json {
        Some(t) => Network::from_json(t).map_err(err),
        None => Ok(Network::ieee33()),
    }
}

/// Built-in case as JSON ("ieee33" or "toy5").
#[pyfunction]
#[pyo3(signature = (name = "ieee33"))]
fn builtin_case(name: &str) -> PyResult<String> {
    match name {
        "ieee33" => Ok(Network::ieee33().to_json()),
        "toy5" => Ok(Network::toy5().to_json()),
        _ => Err(PyValueError::new_err(format!("unknown case {name:?}"))),
    }
}

/// Violations of a case file; empty when valid.
#[pyfunction]
fn validate_case(case_json: &str) -> PyResult<Vec<String>> {
    let case: voltctl::grid::CaseFile =
        serde_json::from_str(case_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(validate_network(&Network::from_case(case)).iter().map(|v| v.to_string()).collect())
}

/// Solves one snapshot. `p`, `q` are nodal injections in p.u.
#[pyfunction]
#[pyo3(signature = (p, q, v_root = 1.0, case_json = None))]
fn power_flow(p: Vec<f64>, q: Vec<f64>, v_root: f64, case_json: Option<&str>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let net = network(case_json)?;
    let sol = solve_powerflow(&net, &Injections { p, q }, v_root).map_err(err)?;
    Ok((sol.v_mag, sol.v_ang))
}

#[pyfunction]
fn similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("forecasts differ in length"));
    }
    Ok(voltctl::llm::similarity::similarity(&a, &b))
}

/// A feeder with its synthetic year.
#[pyclass]
struct Simulator {
    net: Arc<Network>,
    scenario: Scenario,
}

#[pymethods]
impl Simulator {
    #[new]
    #[pyo3(signature = (case_json = None, scenario_seed = 2024))]
    fn new(case_json: Option<&str>, scenario_seed: u64) -> PyResult<Self> {
        let net = network(case_json)?;
        let scenario = Scenario::new(&net, ScenarioConfig::for_network(&net, scenario_seed)).map_err(err)?;
        Ok(Simulator {
            net: Arc::new(net),
            scenario,
        })
    }

    #[getter]
    fn bus_count(&self) -> usize {
        self.net.bus_count()
    }

    /// Hourly system net-load forecast for a day, MW.
    fn forecast(&self, day: usize) -> PyResult<Vec<f64>> {
        Ok(self.scenario.forecast(&self.scenario.day(check_day(day)?)).system)
    }

    /// Schedule from the stub advisor with an empty knowledge base, as JSON.
    #[pyo3(signature = (day, seed = 0))]
    fn stub_schedule(&self, day: usize, seed: u64) -> PyResult<String> {
        let cfg = AdvisorConfig::default();
        let mut agent = LlmAgent::new(cfg.build(seed).map_err(err)?, cfg, KnowledgeBase::default(), DeviceSpecs::of(&self.net));
        let d = self.scenario.day(check_day(day)?);
        let s = agent.schedule_for(&self.scenario.forecast(&d), 0, day);
        serde_json::to_string(&s).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Runs a day with inverters at zero reactive output. Without a schedule
    /// the neutral one (taps 0, capacitors off) is used.
    #[pyo3(signature = (day, schedule_json = None))]
    fn run_day<'py>(&self, py: Python<'py>, day: usize, schedule_json: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
        let schedule = match schedule_json {
            Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => DaySchedule::neutral(self.net.scs.len()),
        };
        let mut env = Env::new(self.net.clone());
        let log = run_day(&mut env, zero_policy(self.net.pvs.len()), self.scenario.day(check_day(day)?), schedule).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("total_reward", log.total_reward)?;
        out.set_item("deviation", log.deviation)?;
        out.set_item("violation_rate", log.violation_rate)?;
        out.set_item("hourly_system", log.hourly_system)?;
        Ok(out)
    }
}

fn check_day(day: usize) -> PyResult<usize> {
    if day >= DAYS_PER_YEAR {
        return Err(PyValueError::new_err(format!("day must be below {DAYS_PER_YEAR}")));
    }
    Ok(day)
}

/// Runs an experiment config (JSON) and returns the result table as CSV.
#[pyfunction]
fn run_experiment(config_json: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(err)?;
    let (table, _) = evaluate_methods(&cfg).map_err(err)?;
    Ok(table.to_csv())
}

#[pymodule]
fn pyvoltctl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(builtin_case, m)?)?;
    m.add_function(wrap_pyfunction!(validate_case, m)?)?;
    m.add_function(wrap_pyfunction!(power_flow, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<Simulator>()?;
    Ok(())
}
