//! Run orchestration: wires measurements to network units, constructs the
//! violation-free base case, sweeps scenarios and writes the run artifacts.
//!
//! Timestamps are independent work units. Sweeps fan out over the worker
//! pool and merge in timestamp order, so every artifact is byte-stable
//! across repeated runs with the same inputs.

pub mod report;

use std::collections::BTreeMap;
use std::io::Write as _;

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::Instant;

use chrono::{DateTime, SecondsFormat, Utc};
use rayon::prelude::*;
use serde::Serialize;

use crate::cae::{self, ContingencyCase, ContingencyOutcome};
use crate::config::{RunConfig, RunPaths, ScenarioConfig};
use crate::error::{Error, Result};
use crate::ingestion::{
    self, aggregate_to_substation, parse_measurements, GapEvent, SubstationSeries,
};
use crate::network::{apply_outage, build_admittance, AdmittanceMatrix, BusId, Network};
use crate::powerflow::{solve_with_admittance, OperatingPoint, PqMw};
use crate::rsae::{assess, AssessmentContext, ViolationKind, ViolationReport};
use crate::smfae::{
    build_problem, solve_and_verify, ActivationMode, RedispatchConfig, SetpointSchedule,
    SlackPolicy,
};

use report::{
    BaseCaseMetrics, BusEnvelope, ContingencyMetrics, RedispatchCounts, RunMetrics,
    ScenarioMetrics, StepFailure, Timings,
};

/// Duration of one operating point in hours.
pub const STEP_HOURS: f64 = 0.25;
/// Setpoint deviations at or below this magnitude (MW / MVAr) do not count
/// as activations.
pub const ACTIVATION_EPS_MW: f64 = 1e-6;

/// Progress report from a sweep phase.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub phase: &'static str,
    pub done: usize,
    pub total: usize,
}

pub type ProgressSink = dyn Fn(Progress) + Sync;

fn tick(sink: Option<&ProgressSink>, phase: &'static str, counter: &AtomicUsize, total: usize) {
    let done = counter.fetch_add(1, Ordering::Relaxed) + 1;
    if let Some(cb) = sink {
        if done % 2000 == 0 || done == total {
            cb(Progress { phase, done, total });
        }
    }
}

/// Wall-clock accumulators per engine, in nanoseconds.
#[derive(Default)]
pub struct Timers {
    powerflow: AtomicU64,
    rsae: AtomicU64,
    cae: AtomicU64,
    smfae: AtomicU64,
}

impl Timers {
    fn add(&self, slot: &AtomicU64, start: Instant) {
        slot.fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
    }

    fn snapshot(&self, base_case_s: f64, total_s: f64) -> Timings {
        let s = |a: &AtomicU64| a.load(Ordering::Relaxed) as f64 * 1e-9;
        Timings {
            base_case_s,
            powerflow_s: s(&self.powerflow),
            rsae_s: s(&self.rsae),
            cae_s: s(&self.cae),
            smfae_s: s(&self.smfae),
            total_s,
        }
    }
}

/// Wiring of one substation to its network units, matched by bus name.
#[derive(Debug, Clone, Copy)]
pub struct SubstationUnits {
    pub bus: BusId,
    pub generator: u32,
    pub load: u32,
}

/// Substation-name to unit mapping for a network.
#[derive(Debug, Clone, Default)]
pub struct SubstationMap {
    pub entries: BTreeMap<String, SubstationUnits>,
}

/// Matches every substation series to the bus carrying its name and the
/// generator and load connected there. Every in-service generator and load
/// must be covered, otherwise operating points would be incomplete.
pub fn map_substations(
    net: &Network,
    series: &BTreeMap<String, SubstationSeries>,
) -> Result<SubstationMap> {
    let mut map = SubstationMap::default();
    for name in series.keys() {
        let matches: Vec<&crate::network::Bus> =
            net.buses.iter().filter(|b| &b.name == name).collect();
        let bus = match matches.as_slice() {
            [one] => one.id,
            [] => {
                return Err(Error::data(format!(
                    "substation `{name}` has measurements but no bus carries that name"
                )))
            }
            _ => {
                return Err(Error::data(format!(
                    "substation `{name}` matches {} buses; bus names must be unique per substation",
                    matches.len()
                )))
            }
        };
        let gens: Vec<u32> = net
            .generators
            .iter()
            .filter(|g| g.bus == bus && g.in_service)
            .map(|g| g.id)
            .collect();
        let loads: Vec<u32> = net
            .loads
            .iter()
            .filter(|l| l.bus == bus && l.in_service)
            .map(|l| l.id)
            .collect();
        let (generator, load) = match (gens.as_slice(), loads.as_slice()) {
            ([g], [l]) => (*g, *l),
            _ => {
                return Err(Error::data(format!(
                    "substation `{name}` (bus {bus}) needs exactly one in-service generator \
                     and load, found {} and {}",
                    gens.len(),
                    loads.len()
                )))
            }
        };
        map.entries.insert(name.clone(), SubstationUnits { bus, generator, load });
    }

    for g in net.generators.iter().filter(|g| g.in_service) {
        if !map.entries.values().any(|u| u.generator == g.id) {
            return Err(Error::data(format!(
                "generator {} has no measurement series (bus {} is not a named substation)",
                g.id, g.bus
            )));
        }
    }
    for l in net.loads.iter().filter(|l| l.in_service) {
        if !map.entries.values().any(|u| u.load == l.id) {
            return Err(Error::data(format!(
                "load {} has no measurement series (bus {} is not a named substation)",
                l.id, l.bus
            )));
        }
    }
    Ok(map)
}

/// Per-generator flexibility bound: the larger of the declared historical
/// maximum and the maximum observed in the ingested horizon.
pub fn effective_hist_max(
    net: &Network,
    series: &BTreeMap<String, SubstationSeries>,
    map: &SubstationMap,
) -> Result<BTreeMap<u32, f64>> {
    let mut out = BTreeMap::new();
    for (name, units) in &map.entries {
        let observed = ingestion::historical_max(&series[name])?;
        let declared = net
            .generator(units.generator)
            .map(|g| g.p_hist_max_mw)
            .unwrap_or(0.0);
        out.insert(units.generator, observed.max(declared));
    }
    Ok(out)
}

/// Builds the measured operating point for one timestamp.
pub fn operating_point_at(
    map: &SubstationMap,
    series: &BTreeMap<String, SubstationSeries>,
    t: DateTime<Utc>,
) -> Result<OperatingPoint> {
    let mut point = OperatingPoint::new(t);
    for (name, units) in &map.entries {
        let sample = series[name].sample_at(t).ok_or_else(|| {
            Error::data(format!("substation `{name}` has no sample at {t}"))
        })?;
        point
            .generators
            .insert(units.generator, PqMw::new(sample.p_gen_mw, sample.q_gen_mvar));
        point
            .loads
            .insert(units.load, PqMw::new(sample.p_load_mw, sample.q_load_mvar));
    }
    Ok(point)
}

/// Everything loaded and wired for a run.
pub struct Inputs {
    pub network: Network,
    pub series: BTreeMap<String, SubstationSeries>,
    pub gaps: Vec<GapEvent>,
    pub map: SubstationMap,
    pub hist_max_mw: BTreeMap<u32, f64>,
    pub config: RunConfig,
}

impl Inputs {
    pub fn point_at(&self, t: DateTime<Utc>) -> Result<OperatingPoint> {
        operating_point_at(&self.map, &self.series, t)
    }

    pub fn horizon(&self) -> Vec<DateTime<Utc>> {
        ingestion::horizon(&self.series)
    }
}

/// Loads network and measurements and wires them together.
pub fn load_inputs(paths: &RunPaths, config: RunConfig) -> Result<Inputs> {
    config.validate()?;
    let network = crate::network::load_network(&paths.network)?;
    let file = std::fs::File::open(&paths.measurements).map_err(|e| {
        Error::data(format!(
            "cannot read measurements {}: {e}",
            paths.measurements.display()
        ))
    })?;
    let records = parse_measurements(std::io::BufReader::new(file))?;
    let outcome = aggregate_to_substation(&records, config.gap_policy, &config.power_factors)?;
    let map = map_substations(&network, &outcome.series)?;
    let hist_max_mw = effective_hist_max(&network, &outcome.series, &map)?;
    Ok(Inputs {
        network,
        series: outcome.series,
        gaps: outcome.gaps,
        map,
        hist_max_mw,
        config,
    })
}

/// One adopted base-case operating point.
#[derive(Debug, Clone)]
pub struct BasePoint {
    pub timestamp: DateTime<Utc>,
    pub point: OperatingPoint,
    /// Slack import of the adopted state (MW).
    pub p_ext_mw: f64,
    pub q_ext_mvar: f64,
    pub adjusted: bool,
}

/// The violation-free base case over the full horizon.
pub struct BaseCase {
    pub points: Vec<BasePoint>,
    /// Pre-adjustment violation reports, one per violated timestamp.
    pub reports: Vec<ViolationReport>,
    /// Adopted adjustment schedules, in timestamp order.
    pub adjustments: Vec<SetpointSchedule>,
    /// Extremes of the raw measured states before adjustment.
    pub pre_min_vm_pu: f64,
    pub pre_max_vm_pu: f64,
    pub pre_max_loading_percent: f64,
}

/// Redispatch configuration wired from the run config and observed history.
pub fn redispatch_config(inputs: &Inputs, slack: SlackPolicy) -> RedispatchConfig {
    let mut cfg = RedispatchConfig::new(slack, inputs.hist_max_mw.clone());
    cfg.weights = inputs.config.weights;
    cfg.limits = inputs.config.limits;
    cfg.solver = inputs.config.solver;
    cfg
}

/// Replays measurements through power flow and assessment; violated
/// timestamps are repaired with a corrective redispatch under a free slack.
/// Fails listing the offending timestamps when any state cannot be solved
/// or repaired.
pub fn build_base_case(inputs: &Inputs, sink: Option<&ProgressSink>) -> Result<BaseCase> {
    let horizon = inputs.horizon();
    if horizon.is_empty() {
        return Err(Error::data("measurement horizon is empty"));
    }
    let adm = build_admittance(&inputs.network)?;
    let counter = AtomicUsize::new(0);
    let total = horizon.len();

    struct BaseStep {
        point: BasePoint,
        report: Option<ViolationReport>,
        adjustment: Option<SetpointSchedule>,
        min_vm: f64,
        max_vm: f64,
        max_loading: f64,
    }

    let steps: Vec<Result<BaseStep>> = horizon
        .par_iter()
        .map(|&t| {
            let out = (|| -> Result<BaseStep> {
                let point = inputs.point_at(t)?;
                let sol =
                    solve_with_admittance(&inputs.network, &adm, &point, &inputs.config.solver)?;
                let report = assess(&sol, &inputs.config.limits, AssessmentContext::Normal)?;
                let (min_vm, max_vm, max_loading) =
                    (sol.min_vm_pu(), sol.max_vm_pu(), sol.max_loading_percent());
                if report.is_secure() {
                    return Ok(BaseStep {
                        point: BasePoint {
                            timestamp: t,
                            point,
                            p_ext_mw: sol.p_ext_mw,
                            q_ext_mvar: sol.q_ext_mvar,
                            adjusted: false,
                        },
                        report: None,
                        adjustment: None,
                        min_vm,
                        max_vm,
                        max_loading,
                    });
                }
                let rcfg = redispatch_config(inputs, SlackPolicy::Free);
                let problem =
                    build_problem(&inputs.network, &point, ActivationMode::Corrective, &rcfg)?;
                let schedule = solve_and_verify(&problem)?;
                let verification = schedule
                    .verification
                    .as_ref()
                    .expect("verified schedule carries its record");
                let adopted = schedule.applied_to(&point);
                Ok(BaseStep {
                    point: BasePoint {
                        timestamp: t,
                        point: adopted,
                        p_ext_mw: verification.p_ext_mw,
                        q_ext_mvar: verification.q_ext_mvar,
                        adjusted: true,
                    },
                    report: Some(report),
                    adjustment: Some(schedule),
                    min_vm,
                    max_vm,
                    max_loading,
                })
            })();
            tick(sink, "base-case", &counter, total);
            out
        })
        .collect();

    let mut base = BaseCase {
        points: Vec::with_capacity(total),
        reports: Vec::new(),
        adjustments: Vec::new(),
        pre_min_vm_pu: f64::INFINITY,
        pre_max_vm_pu: f64::NEG_INFINITY,
        pre_max_loading_percent: 0.0,
    };
    let mut failed: Vec<(DateTime<Utc>, String)> = Vec::new();
    for (t, step) in horizon.iter().zip(steps) {
        match step {
            Ok(s) => {
                base.pre_min_vm_pu = base.pre_min_vm_pu.min(s.min_vm);
                base.pre_max_vm_pu = base.pre_max_vm_pu.max(s.max_vm);
                base.pre_max_loading_percent = base.pre_max_loading_percent.max(s.max_loading);
                if let Some(r) = s.report {
                    base.reports.push(r);
                }
                if let Some(a) = s.adjustment {
                    base.adjustments.push(a);
                }
                base.points.push(s.point);
            }
            Err(Error::Data(msg)) => return Err(Error::Data(msg)),
            Err(e) => failed.push((*t, e.to_string())),
        }
    }
    if !failed.is_empty() {
        let shown: Vec<String> = failed
            .iter()
            .take(12)
            .map(|(t, e)| format!("{}: {e}", t.to_rfc3339_opts(SecondsFormat::Secs, true)))
            .collect();
        let more = failed.len().saturating_sub(12);
        let suffix = if more > 0 { format!(" (and {more} more)") } else { String::new() };
        return Err(Error::Infeasible(format!(
            "base case construction failed at {} of {} timestamps: [{}]{}",
            failed.len(),
            total,
            shown.join("; "),
            suffix
        )));
    }
    Ok(base)
}

/// A scheduled redispatch kept for the artifact files.
pub struct ScheduleRecord {
    pub scenario: String,
    pub timestamp: DateTime<Utc>,
    pub schedule: SetpointSchedule,
}

/// Everything produced by one scenario sweep.
pub struct ScenarioOutput {
    pub metrics: ScenarioMetrics,
    pub violation_reports: Vec<ViolationReport>,
    pub contingency_cases: Vec<(DateTime<Utc>, ContingencyCase)>,
    pub schedules: Vec<ScheduleRecord>,
    /// (timestamp, import without redispatch, import with redispatch) MW.
    pub import_rows: Vec<(DateTime<Utc>, f64, f64)>,
}

struct ScenStep {
    solved: bool,
    p_without: f64,
    p_with: f64,
    volt_before: Vec<(BusId, f64)>,
    volt_after: Vec<(BusId, f64)>,
    min_vm: f64,
    max_vm: f64,
    max_loading: f64,
    report: Option<ViolationReport>,
    corrective: Option<SetpointSchedule>,
    corrective_counts: RedispatchCounts,
    contingencies: Vec<ContingencyCase>,
    preventive: Vec<SetpointSchedule>,
    preventive_counts: RedispatchCounts,
    failures: Vec<StepFailure>,
}

impl ScenStep {
    fn unsolved() -> Self {
        ScenStep {
            solved: false,
            p_without: 0.0,
            p_with: 0.0,
            volt_before: Vec::new(),
            volt_after: Vec::new(),
            min_vm: f64::INFINITY,
            max_vm: f64::NEG_INFINITY,
            max_loading: 0.0,
            report: None,
            corrective: None,
            corrective_counts: RedispatchCounts::default(),
            contingencies: Vec::new(),
            preventive: Vec::new(),
            preventive_counts: RedispatchCounts::default(),
            failures: Vec::new(),
        }
    }
}

fn scenario_step(
    inputs: &Inputs,
    adm: &AdmittanceMatrix,
    scen: &ScenarioConfig,
    base: &BasePoint,
    timers: &Timers,
) -> Result<ScenStep> {
    let net = &inputs.network;
    let limits = &inputs.config.limits;
    let solver = &inputs.config.solver;
    let t = base.timestamp;
    let mut step = ScenStep::unsolved();

    let point = if (scen.load_scale - 1.0).abs() < 1e-12 {
        base.point.clone()
    } else {
        base.point.with_scaled_loads(scen.load_scale)
    };

    let started = Instant::now();
    let sol = match solve_with_admittance(net, adm, &point, solver) {
        Ok(s) => {
            timers.add(&timers.powerflow, started);
            s
        }
        Err(e) if e.is_data_error() => return Err(e),
        Err(e) => {
            timers.add(&timers.powerflow, started);
            step.failures.push(StepFailure {
                timestamp: t,
                context: "normal".into(),
                reason: format!("power flow failed: {e}"),
            });
            return Ok(step);
        }
    };
    step.solved = true;
    step.p_without = sol.p_ext_mw;
    step.p_with = sol.p_ext_mw;
    step.volt_before = sol.voltages.iter().map(|v| (v.bus, v.vm_pu)).collect();
    step.volt_after = step.volt_before.clone();
    step.min_vm = sol.min_vm_pu();
    step.max_vm = sol.max_vm_pu();
    step.max_loading = sol.max_loading_percent();

    let mut violated = false;
    if scen.rsae {
        let started = Instant::now();
        let report = assess(&sol, limits, AssessmentContext::Normal)?;
        timers.add(&timers.rsae, started);
        if !report.is_secure() {
            violated = true;
            step.report = Some(report);
        }
    }

    if violated && scen.smfae {
        let started = Instant::now();
        let rcfg = redispatch_config(inputs, SlackPolicy::FixedP { p_ext_mw: base.p_ext_mw });
        let attempt = build_problem(net, &point, ActivationMode::Corrective, &rcfg)
            .and_then(|p| solve_and_verify(&p));
        timers.add(&timers.smfae, started);
        step.corrective_counts.attempted += 1;
        match attempt {
            Ok(schedule) => {
                step.corrective_counts.optimal += 1;
                let verification = schedule
                    .verification
                    .as_ref()
                    .expect("verified schedule carries its record");
                step.p_with = verification.p_ext_mw;
                step.volt_after = schedule.voltages.iter().map(|v| (v.bus, v.vm_pu)).collect();
                step.corrective = Some(schedule);
            }
            Err(e) if e.is_data_error() => return Err(e),
            Err(e) => {
                if matches!(e, Error::Infeasible(_)) {
                    step.corrective_counts.infeasible += 1;
                } else {
                    step.corrective_counts.failed += 1;
                }
                step.failures.push(StepFailure {
                    timestamp: t,
                    context: "normal".into(),
                    reason: format!("corrective redispatch failed: {e}"),
                });
            }
        }
    }

    if scen.cae {
        // The N-1 sweep always analyzes the unscaled base state.
        let started = Instant::now();
        let cases = cae::sweep(net, &base.point, limits, solver)?;
        timers.add(&timers.cae, started);
        if scen.smfae {
            for case in &cases {
                let ContingencyOutcome::Violations { .. } = &case.outcome else {
                    continue;
                };
                let started = Instant::now();
                let attempt = apply_outage(net, case.element).and_then(|(pruned, _)| {
                    let rcfg = redispatch_config(inputs, SlackPolicy::Free);
                    let problem = build_problem(
                        &pruned,
                        &base.point,
                        ActivationMode::Preventive { outage: case.element },
                        &rcfg,
                    )?;
                    solve_and_verify(&problem)
                });
                timers.add(&timers.smfae, started);
                step.preventive_counts.attempted += 1;
                match attempt {
                    Ok(schedule) => {
                        step.preventive_counts.optimal += 1;
                        step.preventive.push(schedule);
                    }
                    Err(e) if e.is_data_error() => return Err(e),
                    Err(e) => {
                        if matches!(e, Error::Infeasible(_)) {
                            step.preventive_counts.infeasible += 1;
                        } else {
                            step.preventive_counts.failed += 1;
                        }
                        step.failures.push(StepFailure {
                            timestamp: t,
                            context: case.element.to_string(),
                            reason: format!("preventive redispatch failed: {e}"),
                        });
                    }
                }
            }
        }
        step.contingencies = cases;
    }
    Ok(step)
}

/// Sweeps one scenario over the adopted base case.
pub fn run_scenario(
    inputs: &Inputs,
    adm: &AdmittanceMatrix,
    base: &BaseCase,
    scen: &ScenarioConfig,
    timers: &Timers,
    sink: Option<&ProgressSink>,
) -> Result<ScenarioOutput> {
    let total = base.points.len();
    let counter = AtomicUsize::new(0);
    let steps: Vec<Result<ScenStep>> = base
        .points
        .par_iter()
        .map(|bp| {
            let out = scenario_step(inputs, adm, scen, bp, timers);
            tick(sink, "scenario", &counter, total);
            out
        })
        .collect();

    let mut metrics = ScenarioMetrics::new(scen);
    metrics.operating_points = total;
    let mut out = ScenarioOutput {
        metrics,
        violation_reports: Vec::new(),
        contingency_cases: Vec::new(),
        schedules: Vec::new(),
        import_rows: Vec::new(),
    };
    let mut deltas: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
    let mut conting = ContingencyMetrics::default();
    let mut saw_conting = false;
    let mut min_vm = f64::INFINITY;
    let mut max_vm = f64::NEG_INFINITY;
    let mut max_loading = 0.0_f64;

    for (bp, step) in base.points.iter().zip(steps) {
        let step = step?;
        let m = &mut out.metrics;
        m.failures.extend(step.failures);
        if !step.solved {
            continue;
        }
        m.solved_points += 1;
        min_vm = min_vm.min(step.min_vm);
        max_vm = max_vm.max(step.max_vm);
        max_loading = max_loading.max(step.max_loading);
        out.import_rows.push((bp.timestamp, step.p_without, step.p_with));
        m.import_energy_without_mwh += step.p_without * STEP_HOURS;
        m.import_energy_with_mwh += step.p_with * STEP_HOURS;

        for (bus, vm) in &step.volt_before {
            let e = m.voltage_envelope.entry(*bus).or_insert_with(BusEnvelope::new);
            e.min_before = e.min_before.min(*vm);
            e.max_before = e.max_before.max(*vm);
        }
        for (bus, vm) in &step.volt_after {
            let e = m.voltage_envelope.entry(*bus).or_insert_with(BusEnvelope::new);
            e.min_after = e.min_after.min(*vm);
            e.max_after = e.max_after.max(*vm);
        }

        if let Some(report) = step.report {
            m.violated_points += 1;
            for v in &report.violations {
                *m.violations_by_kind.entry(kind_name(v.kind).into()).or_insert(0) += 1;
            }
            out.violation_reports.push(report);
        }
        m.redispatch.add(&step.corrective_counts);
        if let Some(schedule) = step.corrective {
            for (gen, sp) in &schedule.setpoints {
                deltas.entry(*gen).or_default().push((sp.delta_p_mw, sp.delta_q_mvar));
            }
            out.schedules.push(ScheduleRecord {
                scenario: scen.name.clone(),
                timestamp: bp.timestamp,
                schedule,
            });
        }

        if !step.contingencies.is_empty() {
            saw_conting = true;
            conting.timestamps += 1;
            for case in &step.contingencies {
                conting.cases += 1;
                match &case.outcome {
                    ContingencyOutcome::Secure => conting.secure += 1,
                    ContingencyOutcome::Violations { .. } => conting.violated += 1,
                    ContingencyOutcome::Diverged { .. } => conting.diverged += 1,
                    ContingencyOutcome::DegenerateTopology => conting.degenerate += 1,
                }
                out.contingency_cases.push((bp.timestamp, case.clone()));
            }
            conting.preventive.add(&step.preventive_counts);
            for schedule in step.preventive {
                out.schedules.push(ScheduleRecord {
                    scenario: scen.name.clone(),
                    timestamp: bp.timestamp,
                    schedule,
                });
            }
        }
    }
    if saw_conting {
        out.metrics.contingency = Some(conting);
    }
    let m = &mut out.metrics;
    if m.solved_points > 0 {
        m.min_vm_pu = Some(min_vm);
        m.max_vm_pu = Some(max_vm);
        m.max_loading_percent = Some(max_loading);
    }
    if m.operating_points > 0 {
        m.violation_rate_percent = m.violated_points as f64 / m.operating_points as f64 * 100.0;
    }
    m.import_reduction_mwh = m.import_energy_without_mwh - m.import_energy_with_mwh;
    m.delta_summary = deltas
        .iter()
        .map(|(gen, pairs)| (*gen, report::summarize_deltas(pairs)))
        .collect();
    Ok(out)
}

fn kind_name(kind: ViolationKind) -> &'static str {
    match kind {
        ViolationKind::Overvoltage => "overvoltage",
        ViolationKind::Undervoltage => "undervoltage",
        ViolationKind::Thermal => "thermal",
    }
}

#[derive(Serialize)]
struct ViolationLine<'a> {
    scenario: &'a str,
    #[serde(flatten)]
    report: &'a ViolationReport,
}

#[derive(Serialize)]
struct ContingencyLine<'a> {
    scenario: &'a str,
    timestamp: DateTime<Utc>,
    #[serde(flatten)]
    case: &'a ContingencyCase,
}

fn timestamp_slug(t: DateTime<Utc>) -> String {
    t.format("%Y%m%dT%H%MZ").to_string()
}

fn float_field(v: f64) -> String {
    format!("{v}")
}

/// Executes the configured run end to end and writes all artifacts.
pub fn run_all(
    paths: &RunPaths,
    config: RunConfig,
    sink: Option<&ProgressSink>,
) -> Result<RunMetrics> {
    let run_started = Instant::now();
    let inputs = load_inputs(paths, config)?;
    let adm = build_admittance(&inputs.network)?;
    let horizon = inputs.horizon();
    if horizon.is_empty() {
        return Err(Error::data("measurement horizon is empty"));
    }

    let base_started = Instant::now();
    let base = build_base_case(&inputs, sink)?;
    let base_case_s = base_started.elapsed().as_secs_f64();

    let timers = Timers::default();
    let mut outputs: Vec<ScenarioOutput> = Vec::new();
    for scen in &inputs.config.scenarios {
        outputs.push(run_scenario(&inputs, &adm, &base, scen, &timers, sink)?);
    }

    let mut metrics = RunMetrics {
        horizon_start: *horizon.first().expect("non-empty horizon"),
        horizon_end: *horizon.last().expect("non-empty horizon"),
        operating_points: horizon.len(),
        gap_events: inputs.gaps.len(),
        base_case: BaseCaseMetrics {
            operating_points: base.points.len(),
            violated_points: base.reports.len(),
            violation_rate_percent: base.reports.len() as f64 / base.points.len() as f64 * 100.0,
            adjusted_points: base.adjustments.len(),
            pre_min_vm_pu: base.pre_min_vm_pu,
            pre_max_vm_pu: base.pre_max_vm_pu,
            pre_max_loading_percent: base.pre_max_loading_percent,
            import_energy_mwh: base.points.iter().map(|p| p.p_ext_mw * STEP_HOURS).sum(),
        },
        scenarios: outputs.iter().map(|o| o.metrics.clone()).collect(),
        timings: Timings::default(),
    };
    metrics.timings = timers.snapshot(base_case_s, run_started.elapsed().as_secs_f64());

    write_artifacts(paths, &inputs, &base, &outputs, &metrics)?;
    Ok(metrics)
}

fn write_artifacts(
    paths: &RunPaths,
    inputs: &Inputs,
    base: &BaseCase,
    outputs: &[ScenarioOutput],
    metrics: &RunMetrics,
) -> Result<()> {
    let dir = &paths.out_dir;
    std::fs::create_dir_all(dir.join("setpoints"))?;

    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(metrics)? + "\n",
    )?;

    let mut violations = std::io::BufWriter::new(std::fs::File::create(dir.join("violations.jsonl"))?);
    for report in &base.reports {
        let line = serde_json::to_string(&ViolationLine { scenario: "base-case", report })?;
        writeln!(violations, "{line}")?;
    }
    for out in outputs {
        for report in &out.violation_reports {
            let line = serde_json::to_string(&ViolationLine {
                scenario: &out.metrics.name,
                report,
            })?;
            writeln!(violations, "{line}")?;
        }
    }
    violations.flush()?;

    let mut conting = std::io::BufWriter::new(std::fs::File::create(dir.join("contingencies.jsonl"))?);
    for out in outputs {
        for (t, case) in &out.contingency_cases {
            let line = serde_json::to_string(&ContingencyLine {
                scenario: &out.metrics.name,
                timestamp: *t,
                case,
            })?;
            writeln!(conting, "{line}")?;
        }
    }
    conting.flush()?;

    let mut deltas = csv::Writer::from_path(dir.join("deltas.csv"))?;
    deltas.write_record(["scenario", "timestamp", "context", "generator", "delta_p_mw", "delta_q_mvar"])?;
    let mut write_schedule_deltas = |scenario: &str, s: &SetpointSchedule| -> Result<()> {
        let context = match s.mode {
            ActivationMode::Corrective => "normal".to_string(),
            ActivationMode::Preventive { outage } => outage.to_string(),
        };
        for (gen, sp) in &s.setpoints {
            deltas.write_record([
                scenario.to_string(),
                s.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
                context.clone(),
                gen.to_string(),
                float_field(sp.delta_p_mw),
                float_field(sp.delta_q_mvar),
            ])?;
        }
        Ok(())
    };
    for s in &base.adjustments {
        write_schedule_deltas("base-case", s)?;
    }
    for out in outputs {
        for rec in &out.schedules {
            write_schedule_deltas(&rec.scenario, &rec.schedule)?;
        }
    }
    deltas.flush()?;

    let mut imports = csv::Writer::from_path(dir.join("import_comparison.csv"))?;
    imports.write_record(["scenario", "timestamp", "p_ext_without_mw", "p_ext_with_mw"])?;
    for out in outputs {
        for (t, without, with) in &out.import_rows {
            imports.write_record([
                out.metrics.name.clone(),
                t.to_rfc3339_opts(SecondsFormat::Secs, true),
                float_field(*without),
                float_field(*with),
            ])?;
        }
    }
    imports.flush()?;

    for s in &base.adjustments {
        let name = format!("base-case-corrective-{}.json", timestamp_slug(s.timestamp));
        std::fs::write(dir.join("setpoints").join(name), s.to_json()? + "\n")?;
    }
    for out in outputs {
        for rec in &out.schedules {
            let name = match rec.schedule.mode {
                ActivationMode::Corrective => format!(
                    "{}-corrective-{}.json",
                    rec.scenario,
                    timestamp_slug(rec.timestamp)
                ),
                ActivationMode::Preventive { outage } => format!(
                    "{}-preventive-{}-{}.json",
                    rec.scenario,
                    timestamp_slug(rec.timestamp),
                    outage.to_string().replace(':', "-")
                ),
            };
            std::fs::write(dir.join("setpoints").join(name), rec.schedule.to_json()? + "\n")?;
        }
    }

    std::fs::write(dir.join("summary.md"), report::render_summary(metrics, inputs))?;
    Ok(())
}
