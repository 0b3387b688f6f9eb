//! Python bindings for the distribution network twin.
//!
//! The module mirrors the CLI building blocks: load a network, build an
//! operating point, solve power flows, assess limits, sweep contingencies
//! and run the flexibility redispatch.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gridtwin::network::{self, BranchRef};
use gridtwin::powerflow::{self, PqMw, SolverOptions};
use gridtwin::rsae::{self, AssessmentContext, SecurityLimits};
use gridtwin::smfae::{self, ActivationMode, SlackPolicy};
use gridtwin::{cae, fixtures};

fn to_py(e: gridtwin::Error) -> PyErr {
    if e.is_data_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse_timestamp(s: &str) -> PyResult<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| PyValueError::new_err(format!("cannot parse timestamp `{s}`: {e}")))
}

/// Validated network model.
#[pyclass(frozen)]
struct Network {
    inner: network::Network,
}

#[pymethods]
impl Network {
    /// Loads and validates a network document from a JSON file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Network { inner: network::load_network(path).map_err(to_py)? })
    }

    /// Parses and validates a network document from a JSON string.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Network { inner: network::network_from_json(text).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn bus_count(&self) -> usize {
        self.inner.buses.len()
    }

    #[getter]
    fn line_count(&self) -> usize {
        self.inner.lines.len()
    }

    #[getter]
    fn transformer_count(&self) -> usize {
        self.inner.transformers.len()
    }

    #[getter]
    fn generator_count(&self) -> usize {
        self.inner.generators.len()
    }

    #[getter]
    fn load_count(&self) -> usize {
        self.inner.loads.len()
    }

    #[getter]
    fn slack_bus(&self) -> u32 {
        self.inner.ext_grid.bus
    }

    /// Bus names keyed by id.
    fn bus_names(&self) -> BTreeMap<u32, String> {
        self.inner
            .buses
            .iter()
            .map(|b| (b.id, b.name.clone()))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(buses={}, lines={}, transformers={}, generators={}, loads={})",
            self.inner.buses.len(),
            self.inner.lines.len(),
            self.inner.transformers.len(),
            self.inner.generators.len(),
            self.inner.loads.len()
        )
    }
}

/// Injections and withdrawals for one timestamp (MW / MVAr per unit id).
#[pyclass]
struct OperatingPoint {
    inner: powerflow::OperatingPoint,
}

#[pymethods]
impl OperatingPoint {
    #[new]
    fn new(timestamp: &str) -> PyResult<Self> {
        Ok(OperatingPoint {
            inner: powerflow::OperatingPoint::new(parse_timestamp(timestamp)?),
        })
    }

    fn set_generator(&mut self, id: u32, p_mw: f64, q_mvar: f64) {
        self.inner.generators.insert(id, PqMw::new(p_mw, q_mvar));
    }

    fn set_load(&mut self, id: u32, p_mw: f64, q_mvar: f64) {
        self.inner.loads.insert(id, PqMw::new(p_mw, q_mvar));
    }

    /// Multiplies both load channels by `scale`.
    fn scale_loads(&mut self, scale: f64) -> PyResult<()> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(PyValueError::new_err("scale must be positive"));
        }
        for pq in self.inner.loads.values_mut() {
            pq.p_mw *= scale;
            pq.q_mvar *= scale;
        }
        Ok(())
    }

    #[getter]
    fn timestamp(&self) -> String {
        self.inner
            .timestamp
            .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }

    fn generators(&self) -> BTreeMap<u32, (f64, f64)> {
        self.inner
            .generators
            .iter()
            .map(|(&id, pq)| (id, (pq.p_mw, pq.q_mvar)))
            .collect()
    }

    fn loads(&self) -> BTreeMap<u32, (f64, f64)> {
        self.inner
            .loads
            .iter()
            .map(|(&id, pq)| (id, (pq.p_mw, pq.q_mvar)))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "OperatingPoint({}, generators={}, loads={})",
            self.timestamp(),
            self.inner.generators.len(),
            self.inner.loads.len()
        )
    }
}

/// Solved steady state.
#[pyclass(frozen)]
struct PowerFlowSolution {
    inner: powerflow::PowerFlowSolution,
}

#[pymethods]
impl PowerFlowSolution {
    /// Voltage magnitudes in pu keyed by bus id.
    fn voltages(&self) -> BTreeMap<u32, f64> {
        self.inner.voltages.iter().map(|v| (v.bus, v.vm_pu)).collect()
    }

    /// (vm_pu, va_rad) for one bus.
    fn voltage(&self, bus: u32) -> PyResult<(f64, f64)> {
        self.inner
            .voltage(bus)
            .map(|v| (v.vm_pu, v.va_rad))
            .ok_or_else(|| PyValueError::new_err(format!("no in-service bus {bus}")))
    }

    /// Loading in percent of the thermal rating keyed by branch id string.
    fn loadings(&self) -> BTreeMap<String, f64> {
        self.inner
            .branches
            .iter()
            .map(|b| (b.branch.to_string(), b.loading_percent))
            .collect()
    }

    #[getter]
    fn p_ext_mw(&self) -> f64 {
        self.inner.p_ext_mw
    }

    #[getter]
    fn q_ext_mvar(&self) -> f64 {
        self.inner.q_ext_mvar
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn max_mismatch_pu(&self) -> f64 {
        self.inner.max_mismatch_pu
    }

    #[getter]
    fn min_vm_pu(&self) -> f64 {
        self.inner.min_vm_pu()
    }

    #[getter]
    fn max_vm_pu(&self) -> f64 {
        self.inner.max_vm_pu()
    }

    #[getter]
    fn max_loading_percent(&self) -> f64 {
        self.inner.max_loading_percent()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "PowerFlowSolution(iterations={}, p_ext_mw={:.3}, vm range {:.4}..{:.4})",
            self.inner.iterations,
            self.inner.p_ext_mw,
            self.inner.min_vm_pu(),
            self.inner.max_vm_pu()
        )
    }
}

fn limits_from_kwargs(
    v_min_pu: Option<f64>,
    v_max_pu: Option<f64>,
    loading_max_percent: Option<f64>,
) -> SecurityLimits {
    let mut limits = SecurityLimits::default();
    if let Some(v) = v_min_pu {
        limits.v_min_pu = v;
    }
    if let Some(v) = v_max_pu {
        limits.v_max_pu = v;
    }
    if let Some(v) = loading_max_percent {
        limits.loading_max_percent = v;
    }
    limits
}

/// Solves the AC power flow for one operating point.
#[pyfunction]
fn solve_power_flow(net: &Network, point: &OperatingPoint) -> PyResult<PowerFlowSolution> {
    let solution = powerflow::solve_power_flow(&net.inner, &point.inner, &SolverOptions::default())
        .map_err(to_py)?;
    Ok(PowerFlowSolution { inner: solution })
}

/// Assesses security limits; returns a list of violation dicts.
#[pyfunction]
#[pyo3(signature = (net, point, v_min_pu=None, v_max_pu=None, loading_max_percent=None))]
fn assess(
    py: Python<'_>,
    net: &Network,
    point: &OperatingPoint,
    v_min_pu: Option<f64>,
    v_max_pu: Option<f64>,
    loading_max_percent: Option<f64>,
) -> PyResult<Vec<Py<PyDict>>> {
    let limits = limits_from_kwargs(v_min_pu, v_max_pu, loading_max_percent);
    let solution = powerflow::solve_power_flow(&net.inner, &point.inner, &SolverOptions::default())
        .map_err(to_py)?;
    let report = rsae::assess(&solution, &limits, AssessmentContext::Normal).map_err(to_py)?;
    report
        .violations
        .iter()
        .map(|v| {
            let d = PyDict::new(py);
            d.set_item("kind", format!("{:?}", v.kind).to_lowercase())?;
            d.set_item("element", v.element.to_string())?;
            d.set_item("value", v.value)?;
            d.set_item("limit", v.limit)?;
            Ok(d.unbind())
        })
        .collect()
}

/// Runs the N-1 sweep; returns a list of case dicts in enumeration order.
#[pyfunction]
#[pyo3(signature = (net, point, v_min_pu=None, v_max_pu=None, loading_max_percent=None))]
fn contingencies(
    py: Python<'_>,
    net: &Network,
    point: &OperatingPoint,
    v_min_pu: Option<f64>,
    v_max_pu: Option<f64>,
    loading_max_percent: Option<f64>,
) -> PyResult<Vec<Py<PyDict>>> {
    let limits = limits_from_kwargs(v_min_pu, v_max_pu, loading_max_percent);
    let cases = cae::sweep(&net.inner, &point.inner, &limits, &SolverOptions::default())
        .map_err(to_py)?;
    cases
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("element", c.element.to_string())?;
            let outcome = match &c.outcome {
                cae::ContingencyOutcome::Secure => "secure",
                cae::ContingencyOutcome::Violations { .. } => "violations",
                cae::ContingencyOutcome::Diverged { .. } => "diverged",
                cae::ContingencyOutcome::DegenerateTopology => "degenerate-topology",
            };
            d.set_item("outcome", outcome)?;
            d.set_item("islanded_buses", c.islanded_buses.iter().copied().collect::<Vec<_>>())?;
            if let cae::ContingencyOutcome::Violations { report } = &c.outcome {
                d.set_item("violations", report.violations.len())?;
            }
            if let Some(s) = c.summary {
                d.set_item("min_vm_pu", s.min_vm_pu)?;
                d.set_item("max_vm_pu", s.max_vm_pu)?;
                d.set_item("max_loading_percent", s.max_loading_percent)?;
            }
            Ok(d.unbind())
        })
        .collect()
}

/// Optimized flexibility schedule.
#[pyclass(frozen)]
struct SetpointSchedule {
    inner: smfae::SetpointSchedule,
}

#[pymethods]
impl SetpointSchedule {
    #[getter]
    fn objective(&self) -> f64 {
        self.inner.objective
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn p_ext_mw(&self) -> f64 {
        self.inner.p_ext_mw
    }

    #[getter]
    fn q_ext_mvar(&self) -> f64 {
        self.inner.q_ext_mvar
    }

    /// (p_mw, q_mvar, delta_p_mw, delta_q_mvar) keyed by generator id.
    fn setpoints(&self) -> BTreeMap<u32, (f64, f64, f64, f64)> {
        self.inner
            .setpoints
            .iter()
            .map(|(&id, s)| (id, (s.p_mw, s.q_mvar, s.delta_p_mw, s.delta_q_mvar)))
            .collect()
    }

    /// Violations counted when replaying the schedule through a power flow.
    #[getter]
    fn verified_violations(&self) -> Option<usize> {
        self.inner.verification.as_ref().map(|v| v.violations)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "SetpointSchedule(objective={:.6}, setpoints={}, iterations={})",
            self.inner.objective,
            self.inner.setpoints.len(),
            self.inner.iterations
        )
    }
}

/// Solves the corrective (or, with `contingency`, preventive) redispatch.
///
/// `hist_max_mw` bounds the usable flexibility per generator id; generators
/// missing from the map are held fixed.
#[pyfunction]
#[pyo3(signature = (net, point, hist_max_mw, contingency=None, v_min_pu=None, v_max_pu=None, loading_max_percent=None))]
fn redispatch(
    net: &Network,
    point: &OperatingPoint,
    hist_max_mw: BTreeMap<u32, f64>,
    contingency: Option<&str>,
    v_min_pu: Option<f64>,
    v_max_pu: Option<f64>,
    loading_max_percent: Option<f64>,
) -> PyResult<SetpointSchedule> {
    let mut config = smfae::RedispatchConfig::new(SlackPolicy::Free, hist_max_mw);
    config.limits = limits_from_kwargs(v_min_pu, v_max_pu, loading_max_percent);
    let problem = match contingency {
        Some(raw) => {
            let element: BranchRef = raw
                .parse()
                .map_err(to_py)?;
            let (pruned, _islanded) =
                network::apply_outage(&net.inner, element).map_err(to_py)?;
            smfae::build_problem(
                &pruned,
                &point.inner,
                ActivationMode::Preventive { outage: element },
                &config,
            )
            .map_err(to_py)?
        }
        None => smfae::build_problem(&net.inner, &point.inner, ActivationMode::Corrective, &config)
            .map_err(to_py)?,
    };
    let schedule = smfae::solve_and_verify(&problem).map_err(to_py)?;
    Ok(SetpointSchedule { inner: schedule })
}

/// Writes the synthetic fixture (network.json, measurements.csv, config.json).
#[pyfunction]
#[pyo3(signature = (out_dir, steps=None, seed=None))]
fn write_fixture(out_dir: &str, steps: Option<usize>, seed: Option<u64>) -> PyResult<()> {
    let mut spec = fixtures::FixtureSpec::default();
    if let Some(s) = steps {
        spec.steps = s;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    fixtures::write_fixture(out_dir, &spec).map_err(to_py)
}

#[pymodule]
fn gridtwin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_class::<OperatingPoint>()?;
    m.add_class::<PowerFlowSolution>()?;
    m.add_class::<SetpointSchedule>()?;
    m.add_function(wrap_pyfunction!(solve_power_flow, m)?)?;
    m.add_function(wrap_pyfunction!(assess, m)?)?;
    m.add_function(wrap_pyfunction!(contingencies, m)?)?;
    m.add_function(wrap_pyfunction!(redispatch, m)?)?;
    m.add_function(wrap_pyfunction!(write_fixture, m)?)?;
    Ok(())
}
