//! Flexibility redispatch: minimal-deviation generator setpoint changes that
//! restore secure operation.
//!
//! The engine solves a nonlinear program over the full AC model: quadratic
//! deviation costs on the generator setpoints, power-balance equalities at
//! every bus, branch-current caps with a security margin, a power-factor
//! envelope per generator, the voltage band as hard bounds and the slack-bus
//! exchange pinned to its schedule (corrective and preventive use) or left
//! free. Every accepted schedule is verified by replaying it through the
//! Newton power flow and re-running the limit checks.

pub mod nlp;
mod problem;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{build_admittance, AdmittanceMatrix, BranchRef, Network};
use crate::powerflow::{
    newton_voltages, solve_with_admittance, BusVoltage, OperatingPoint, PqMw, SolverOptions,
};
use crate::rsae::{assess, AssessmentContext, SecurityLimits};
use crate::smfae::nlp::{solve_nlp, NlpOptions, NlpProblem, NlpSolution, NlpStatus};
use crate::smfae::problem::{CompiledNlp, ElasticNlp};

/// Verification gate: largest tolerated slack-exchange deviation (pu).
pub const VERIFY_SLACK_DEV_MAX_PU: f64 = 1e-4;
/// Verification gate: largest tolerated voltage gap between the optimizer
/// state and the replayed power flow (pu).
pub const VERIFY_VOLTAGE_GAP_MAX_PU: f64 = 1e-6;
/// Limit slack granted when re-assessing a schedule: the optimizer fulfils
/// inequalities to this tolerance, so bound-active optima may undershoot the
/// raw limit by a hair after the power-flow replay.
pub const VERIFY_LIMIT_SLACK: f64 = 1e-6;

/// Quadratic deviation weights of the objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedispatchWeights {
    pub w_p: f64,
    pub w_q: f64,
}

impl Default for RedispatchWeights {
    fn default() -> Self {
        RedispatchWeights { w_p: 10.0, w_q: 1.0 }
    }
}

impl RedispatchWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_p.is_finite() && self.w_p > 0.0 && self.w_q.is_finite() && self.w_q > 0.0) {
            return Err(Error::data("redispatch weights must be finite and positive"));
        }
        Ok(())
    }
}

/// How the active slack-bus exchange is treated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlackPolicy {
    /// Pinned to a scheduled import (MW); the redispatch may not lean on the
    /// external grid.
    FixedP { p_ext_mw: f64 },
    /// Left free; the external grid absorbs any imbalance.
    Free,
}

/// Why the redispatch is being run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationMode {
    /// Violations in the intact network at this time step.
    Corrective,
    /// Violations in the post-outage network of the given branch; the
    /// problem must be built on that post-outage network.
    Preventive { outage: BranchRef },
}

/// Everything needed to build one redispatch instance.
#[derive(Debug, Clone)]
pub struct RedispatchConfig {
    pub weights: RedispatchWeights,
    pub limits: SecurityLimits,
    /// Displacement power factor of the generator flexibility envelope.
    pub envelope_pf: f64,
    pub slack: SlackPolicy,
    /// Historical maximum active power per generator id (MW).
    pub hist_max_mw: BTreeMap<u32, f64>,
    pub solver: SolverOptions,
    pub nlp: NlpOptions,
}

impl RedispatchConfig {
    pub fn new(slack: SlackPolicy, hist_max_mw: BTreeMap<u32, f64>) -> Self {
        RedispatchConfig {
            weights: RedispatchWeights::default(),
            limits: SecurityLimits::default(),
            envelope_pf: 0.95,
            slack,
            hist_max_mw,
            solver: SolverOptions::default(),
            nlp: NlpOptions::default(),
        }
    }
}

/// A compiled redispatch instance.
pub struct RedispatchProblem {
    pub(crate) net: Network,
    pub(crate) adm: AdmittanceMatrix,
    pub(crate) point: OperatingPoint,
    pub(crate) mode: ActivationMode,
    pub(crate) config: RedispatchConfig,
    pub(crate) compiled: CompiledNlp,
}

impl RedispatchProblem {
    /// Number of scalar decision variables.
    pub fn num_vars(&self) -> usize {
        self.compiled.nx
    }

    /// Number of adjustable generators.
    pub fn num_adjustable(&self) -> usize {
        self.compiled.gens.len()
    }

    /// Generator ids frozen at zero by a zero historical maximum.
    pub fn frozen_generators(&self) -> &[u32] {
        &self.compiled.frozen
    }

    pub fn mode(&self) -> ActivationMode {
        self.mode
    }
}

/// Builds a redispatch instance for one operating point.
///
/// For preventive use, `net` must already be the post-outage network, so
/// islanded units are out of service and drop out of the problem. Errors
/// when a historical maximum is missing for an in-service generator or when
/// no generator remains adjustable.
pub fn build_problem(
    net: &Network,
    point: &OperatingPoint,
    mode: ActivationMode,
    config: &RedispatchConfig,
) -> Result<RedispatchProblem> {
    config.weights.validate()?;
    config.limits.validate()?;
    if !(config.envelope_pf > 0.0 && config.envelope_pf <= 1.0) {
        return Err(Error::data(format!(
            "envelope power factor must lie in (0, 1], got {}",
            config.envelope_pf
        )));
    }
    let point = point.restricted_to(net);
    point.validate(net)?;

    let in_service: Vec<&crate::network::Generator> =
        net.generators.iter().filter(|g| g.in_service).collect();
    if in_service.is_empty() {
        return Err(Error::data("redispatch needs at least one in-service generator"));
    }
    for g in &in_service {
        match config.hist_max_mw.get(&g.id) {
            Some(v) if v.is_finite() && *v >= 0.0 => {}
            Some(v) => {
                return Err(Error::data(format!(
                    "generator {}: historical maximum {v} is not a valid bound",
                    g.id
                )))
            }
            None => {
                return Err(Error::data(format!(
                    "generator {}: historical maximum missing from redispatch config",
                    g.id
                )))
            }
        }
    }
    if let ActivationMode::Preventive { outage } = mode {
        let still_in = match outage {
            BranchRef::Line(id) => net.line(id).map(|l| l.in_service),
            BranchRef::Transformer(id) => net.transformer(id).map(|t| t.in_service),
        };
        if still_in != Some(false) {
            return Err(Error::data(format!(
                "preventive problem for {outage} must be built on the post-outage network"
            )));
        }
    }

    let adm = build_admittance(net)?;
    let compiled = CompiledNlp::new(
        net,
        &adm,
        &point,
        &config.weights,
        &config.limits,
        config.envelope_pf,
        &config.slack,
        &config.hist_max_mw,
    );
    if compiled.gens.is_empty() {
        return Err(Error::data(
            "redispatch needs at least one generator with a positive historical maximum",
        ));
    }
    Ok(RedispatchProblem {
        net: net.clone(),
        adm,
        point,
        mode,
        config: config.clone(),
        compiled,
    })
}

/// Outcome class of a redispatch attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleStatus {
    Optimal,
    Infeasible,
    SolverFailure,
}

/// New setpoint of one generator (MW / MVAr) and its deviation from base.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GenSetpoint {
    pub p_mw: f64,
    pub q_mvar: f64,
    pub delta_p_mw: f64,
    pub delta_q_mvar: f64,
}

/// Replay check of an accepted schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationRecord {
    /// Limit violations found when replaying through the power flow.
    pub violations: usize,
    /// Worst remaining violation, when any.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub worst_violation: Option<String>,
    /// |P_ext - scheduled| in pu; absent under a free slack policy.
    pub slack_deviation_pu: Option<f64>,
    /// Largest |V_optimizer - V_powerflow| over all buses (pu).
    pub max_voltage_gap_pu: f64,
    /// Largest power-factor envelope overshoot over all generators (pu);
    /// negative values mean the envelope holds with margin.
    pub max_pf_slack_pu: f64,
    pub p_ext_mw: f64,
    pub q_ext_mvar: f64,
}

/// Result of one redispatch solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetpointSchedule {
    pub timestamp: DateTime<Utc>,
    pub mode: ActivationMode,
    pub status: ScheduleStatus,
    /// Objective value `sum w_p dP^2 + w_q dQ^2` in MW^2 / MVAr^2.
    pub objective: f64,
    pub setpoints: BTreeMap<u32, GenSetpoint>,
    /// Slack exchange of the optimized state (MW / MVAr).
    pub p_ext_mw: f64,
    pub q_ext_mvar: f64,
    /// Voltage profile of the optimizer state.
    pub voltages: Vec<BusVoltage>,
    pub iterations: usize,
    pub verification: Option<VerificationRecord>,
}

impl SetpointSchedule {
    /// Applies the schedule on top of an operating point.
    pub fn applied_to(&self, point: &OperatingPoint) -> OperatingPoint {
        let mut out = point.clone();
        for (id, sp) in &self.setpoints {
            out.generators.insert(*id, PqMw::new(sp.p_mw, sp.q_mvar));
        }
        out
    }

    pub fn max_abs_delta_p_mw(&self) -> f64 {
        self.setpoints
            .values()
            .map(|s| s.delta_p_mw.abs())
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn warm_start(problem: &RedispatchProblem) -> DVector<f64> {
    let c = &problem.compiled;
    let mut x0 = DVector::zeros(c.nx);
    let s_inj = problem
        .point
        .bus_injections_pu(&problem.net, &problem.adm);
    let flow = newton_voltages(&problem.net, &problem.adm, &s_inj, &problem.config.solver);
    match flow {
        Ok((v, _)) => {
            for row in 0..c.n {
                if let Some(i) = c.th[row] {
                    x0[i] = v[row].arg();
                }
                if let Some(i) = c.vm[row] {
                    x0[i] = v[row].norm();
                }
            }
            // Slack exchange implied by the warm-start state.
            let mut acc = num_complex::Complex64::new(0.0, 0.0);
            for j in 0..c.n {
                acc += c.y[(c.slack_row, j)] * v[j];
            }
            let s_ext = v[c.slack_row] * acc.conj() - s_inj[c.slack_row];
            x0[c.q_ext_idx] = s_ext.im;
            if let Some(i) = c.p_ext_idx {
                x0[i] = s_ext.re;
            }
        }
        Err(_) => {
            for row in 0..c.n {
                if let Some(i) = c.vm[row] {
                    x0[i] = 1.0;
                }
            }
        }
    }
    for g in &c.gens {
        x0[g.p_idx] = g.p0_pu;
        x0[g.q_idx] = g.q0_pu;
    }
    x0
}

/// Solves a compiled instance to a verified-form schedule.
///
/// Failed solves are classified through an elastic restoration phase:
/// when even the minimal-slack relaxation keeps a positive residual the
/// instance is reported infeasible, otherwise the main solve is retried
/// from the restored point before giving up as a solver failure.
pub fn solve(problem: &RedispatchProblem) -> Result<SetpointSchedule> {
    let x0 = warm_start(problem);
    let sol = solve_nlp(&problem.compiled, &x0, &problem.config.nlp)?;
    if sol.status == NlpStatus::Converged {
        return finish(problem, sol);
    }

    let elastic = ElasticNlp::new(&problem.compiled);
    let ex0 = elastic.start(&sol.x);
    let mut opts = problem.config.nlp;
    opts.costtol = 1e-8;
    let rescue = solve_nlp(&elastic, &ex0, &opts)?;
    if rescue.status != NlpStatus::Converged {
        return Err(Error::SolverFailure(format!(
            "redispatch at {} did not converge and the restoration phase failed too \
             (feascond {:.3e}, gradcond {:.3e})",
            problem.point.timestamp, sol.feascond, sol.gradcond
        )));
    }
    let x_rest = DVector::from_fn(problem.compiled.nx, |i, _| rescue.x[i]);
    let (g, _) = problem.compiled.equalities(&x_rest);
    let (h, _) = problem.compiled.inequalities(&x_rest);
    let residual = g.amax().max(h.max().max(0.0));
    if residual > 1e-6 {
        return Err(Error::Infeasible(format!(
            "redispatch at {}: minimal constraint violation {:.3e} pu after relaxation",
            problem.point.timestamp, residual
        )));
    }
    let retry = solve_nlp(&problem.compiled, &x_rest, &problem.config.nlp)?;
    if retry.status == NlpStatus::Converged {
        return finish(problem, retry);
    }
    Err(Error::SolverFailure(format!(
        "redispatch at {}: a feasible point exists (residual {:.3e}) but the optimizer \
         stalled (feascond {:.3e}, gradcond {:.3e})",
        problem.point.timestamp, residual, retry.feascond, retry.gradcond
    )))
}

fn finish(problem: &RedispatchProblem, sol: NlpSolution) -> Result<SetpointSchedule> {
    let c = &problem.compiled;
    let s_base = problem.net.s_base_mva;

    // Absolute gates on top of the solver's relative conditions.
    if sol.max_eq_residual > 1e-6 {
        return Err(Error::SolverFailure(format!(
            "redispatch at {}: equality residual {:.3e} pu above tolerance",
            problem.point.timestamp, sol.max_eq_residual
        )));
    }
    if sol.max_ineq_value > 1e-6 {
        return Err(Error::SolverFailure(format!(
            "redispatch at {}: inequality overshoot {:.3e} above tolerance",
            problem.point.timestamp, sol.max_ineq_value
        )));
    }

    let mut setpoints = BTreeMap::new();
    let mut objective = 0.0;
    for g in &c.gens {
        let p_mw = sol.x[g.p_idx] * s_base;
        let q_mvar = sol.x[g.q_idx] * s_base;
        let base = problem
            .point
            .generators
            .get(&g.id)
            .copied()
            .unwrap_or_default();
        let sp = GenSetpoint {
            p_mw,
            q_mvar,
            delta_p_mw: p_mw - base.p_mw,
            delta_q_mvar: q_mvar - base.q_mvar,
        };
        objective += problem.config.weights.w_p * sp.delta_p_mw * sp.delta_p_mw
            + problem.config.weights.w_q * sp.delta_q_mvar * sp.delta_q_mvar;
        setpoints.insert(g.id, sp);
    }
    for id in &c.frozen {
        let base = problem
            .point
            .generators
            .get(id)
            .copied()
            .unwrap_or_default();
        setpoints.insert(
            *id,
            GenSetpoint {
                p_mw: 0.0,
                q_mvar: 0.0,
                delta_p_mw: -base.p_mw,
                delta_q_mvar: -base.q_mvar,
            },
        );
    }

    let voltages: Vec<BusVoltage> = (0..c.n)
        .map(|row| {
            let bus = problem.net.buses[problem.adm.rows[row]].id;
            if row == c.slack_row {
                BusVoltage {
                    bus,
                    vm_pu: c.v_slack,
                    va_rad: 0.0,
                }
            } else {
                BusVoltage {
                    bus,
                    vm_pu: sol.x[c.vm[row].unwrap()],
                    va_rad: sol.x[c.th[row].unwrap()],
                }
            }
        })
        .collect();

    let p_ext_mw = match problem.config.slack {
        SlackPolicy::FixedP { p_ext_mw } => p_ext_mw,
        SlackPolicy::Free => sol.x[c.p_ext_idx.expect("free slack has a variable")] * s_base,
    };

    Ok(SetpointSchedule {
        timestamp: problem.point.timestamp,
        mode: problem.mode,
        status: ScheduleStatus::Optimal,
        objective,
        setpoints,
        p_ext_mw,
        q_ext_mvar: sol.x[c.q_ext_idx] * s_base,
        voltages,
        iterations: sol.iterations,
        verification: None,
    })
}

/// Replays a schedule through the power flow and checks it end to end.
pub fn verify(problem: &RedispatchProblem, schedule: &SetpointSchedule) -> Result<VerificationRecord> {
    if schedule.status != ScheduleStatus::Optimal {
        return Err(Error::data("only optimal schedules can be verified"));
    }
    let applied = schedule.applied_to(&problem.point);
    let solution = solve_with_admittance(&problem.net, &problem.adm, &applied, &problem.config.solver)?;
    let relaxed = SecurityLimits {
        v_min_pu: problem.config.limits.v_min_pu - VERIFY_LIMIT_SLACK,
        v_max_pu: problem.config.limits.v_max_pu + VERIFY_LIMIT_SLACK,
        loading_max_percent: problem.config.limits.loading_max_percent
            + VERIFY_LIMIT_SLACK * 100.0,
    };
    let report = assess(
        &solution,
        &relaxed,
        match problem.mode {
            ActivationMode::Corrective => AssessmentContext::Normal,
            ActivationMode::Preventive { outage } => AssessmentContext::Contingency(outage),
        },
    )?;

    let mut max_gap = 0.0_f64;
    for v in &schedule.voltages {
        if let Some(replayed) = solution.voltage(v.bus) {
            max_gap = max_gap.max((replayed.vm_pu - v.vm_pu).abs());
        }
    }

    let tau = (1.0 - problem.config.envelope_pf * problem.config.envelope_pf).sqrt()
        / problem.config.envelope_pf;
    let s_base = problem.net.s_base_mva;
    let mut max_pf_slack = f64::NEG_INFINITY;
    for g in &problem.compiled.gens {
        if let Some(sp) = schedule.setpoints.get(&g.id) {
            let p = sp.p_mw / s_base;
            let q = sp.q_mvar / s_base;
            let slack = q.abs() - tau * p.abs();
            max_pf_slack = max_pf_slack.max(slack);
        }
    }

    let slack_deviation_pu = match problem.config.slack {
        SlackPolicy::FixedP { p_ext_mw } => Some((solution.p_ext_mw - p_ext_mw).abs() / s_base),
        SlackPolicy::Free => None,
    };

    let worst_violation = report
        .violations
        .iter()
        .max_by(|a, b| {
            let ea = (a.value - a.limit).abs() / a.limit.abs().max(1.0);
            let eb = (b.value - b.limit).abs() / b.limit.abs().max(1.0);
            ea.partial_cmp(&eb).unwrap_or(std::cmp::Ordering::Equal)
        })
        .map(|v| format!("{:?} {} {} (limit {})", v.kind, v.element, v.value, v.limit));

    Ok(VerificationRecord {
        violations: report.violations.len(),
        worst_violation,
        slack_deviation_pu,
        max_voltage_gap_pu: max_gap,
        max_pf_slack_pu: max_pf_slack,
        p_ext_mw: solution.p_ext_mw,
        q_ext_mvar: solution.q_ext_mvar,
    })
}

/// Solves and verifies in one step; verification failures downgrade the
/// result to a solver-failure error.
pub fn solve_and_verify(problem: &RedispatchProblem) -> Result<SetpointSchedule> {
    let mut schedule = solve(problem)?;
    let record = verify(problem, &schedule)?;
    let ok = record.violations == 0
        && record.max_voltage_gap_pu <= VERIFY_VOLTAGE_GAP_MAX_PU
        && record
            .slack_deviation_pu
            .map(|d| d <= VERIFY_SLACK_DEV_MAX_PU)
            .unwrap_or(true);
    if !ok {
        return Err(Error::SolverFailure(format!(
            "redispatch at {} failed verification: {} violations{}, slack deviation {:?} pu, \
             voltage gap {:.3e} pu",
            schedule.timestamp,
            record.violations,
            record
                .worst_violation
                .as_deref()
                .map(|w| format!(" (worst: {w})"))
                .unwrap_or_default(),
            record.slack_deviation_pu,
            record.max_voltage_gap_pu
        )));
    }
    schedule.verification = Some(record);
    Ok(schedule)
}
