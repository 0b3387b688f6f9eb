//! Run metrics, distribution summaries and report regeneration.
//!
//! `regenerate` derives every report file purely from the persisted run
//! artifacts; no power flow is recomputed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{Inputs, ACTIVATION_EPS_MW};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::network::BusId;

/// Wall-clock seconds per phase. Reported in `summary.md` only; keeping
/// them out of `metrics.json` keeps that file byte-stable across runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct Timings {
    pub base_case_s: f64,
    pub powerflow_s: f64,
    pub rsae_s: f64,
    pub cae_s: f64,
    pub smfae_s: f64,
    pub total_s: f64,
}

/// Counts of redispatch attempts by outcome.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RedispatchCounts {
    pub attempted: usize,
    pub optimal: usize,
    pub infeasible: usize,
    pub failed: usize,
}

impl RedispatchCounts {
    pub fn add(&mut self, other: &RedispatchCounts) {
        self.attempted += other.attempted;
        self.optimal += other.optimal;
        self.infeasible += other.infeasible;
        self.failed += other.failed;
    }
}

/// Aggregates over the N-1 portion of a scenario.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ContingencyMetrics {
    /// Timestamps on which the sweep ran.
    pub timestamps: usize,
    pub cases: usize,
    pub secure: usize,
    pub violated: usize,
    pub diverged: usize,
    pub degenerate: usize,
    pub preventive: RedispatchCounts,
}

/// Per-bus voltage extremes before and after redispatch (pu).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BusEnvelope {
    pub min_before: f64,
    pub max_before: f64,
    pub min_after: f64,
    pub max_after: f64,
}

impl BusEnvelope {
    pub fn new() -> Self {
        BusEnvelope {
            min_before: f64::INFINITY,
            max_before: f64::NEG_INFINITY,
            min_after: f64::INFINITY,
            max_after: f64::NEG_INFINITY,
        }
    }
}

impl Default for BusEnvelope {
    fn default() -> Self {
        Self::new()
    }
}

/// Five-number summary plus mean of a sample.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Distribution {
    /// Returns `None` for an empty sample. Quartiles use linear
    /// interpolation between order statistics.
    pub fn from_values(mut values: Vec<f64>) -> Option<Distribution> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
        let n = values.len();
        let quantile = |p: f64| -> f64 {
            let pos = p * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            values[lo] + (values[hi] - values[lo]) * frac
        };
        Some(Distribution {
            count: n,
            min: values[0],
            q1: quantile(0.25),
            median: quantile(0.5),
            q3: quantile(0.75),
            max: values[n - 1],
            mean: values.iter().sum::<f64>() / n as f64,
        })
    }
}

/// Activation statistics of one generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenDeltaSummary {
    /// Timestamps with a non-zero activation on either channel; zero flags
    /// a generator that was never moved.
    pub activations: usize,
    pub p: Option<Distribution>,
    pub q: Option<Distribution>,
}

/// Summarizes (dP, dQ) pairs, keeping only non-zero activations.
pub fn summarize_deltas(pairs: &[(f64, f64)]) -> GenDeltaSummary {
    let activations = pairs
        .iter()
        .filter(|(p, q)| p.abs() > ACTIVATION_EPS_MW || q.abs() > ACTIVATION_EPS_MW)
        .count();
    let p: Vec<f64> = pairs
        .iter()
        .map(|(p, _)| *p)
        .filter(|p| p.abs() > ACTIVATION_EPS_MW)
        .collect();
    let q: Vec<f64> = pairs
        .iter()
        .map(|(_, q)| *q)
        .filter(|q| q.abs() > ACTIVATION_EPS_MW)
        .collect();
    GenDeltaSummary {
        activations,
        p: Distribution::from_values(p),
        q: Distribution::from_values(q),
    }
}

/// A per-timestamp engine failure recorded during a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepFailure {
    pub timestamp: DateTime<Utc>,
    /// `normal` or the outaged element.
    pub context: String,
    pub reason: String,
}

/// Aggregates over the base-case construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseCaseMetrics {
    pub operating_points: usize,
    /// Timestamps violated before adjustment.
    pub violated_points: usize,
    pub violation_rate_percent: f64,
    pub adjusted_points: usize,
    /// Extremes of the raw measured states, before any adjustment.
    pub pre_min_vm_pu: f64,
    pub pre_max_vm_pu: f64,
    pub pre_max_loading_percent: f64,
    /// Import energy of the adopted base case (MWh).
    pub import_energy_mwh: f64,
}

/// Aggregates of one scenario sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub name: String,
    pub load_scale: f64,
    pub operating_points: usize,
    pub solved_points: usize,
    pub violated_points: usize,
    pub violation_rate_percent: f64,
    pub violations_by_kind: BTreeMap<String, usize>,
    /// Pre-redispatch extremes; absent when nothing solved.
    pub min_vm_pu: Option<f64>,
    pub max_vm_pu: Option<f64>,
    pub max_loading_percent: Option<f64>,
    pub redispatch: RedispatchCounts,
    pub import_energy_without_mwh: f64,
    pub import_energy_with_mwh: f64,
    pub import_reduction_mwh: f64,
    pub contingency: Option<ContingencyMetrics>,
    pub voltage_envelope: BTreeMap<BusId, BusEnvelope>,
    pub delta_summary: BTreeMap<u32, GenDeltaSummary>,
    pub failures: Vec<StepFailure>,
}

impl ScenarioMetrics {
    pub fn new(scen: &ScenarioConfig) -> Self {
        ScenarioMetrics {
            name: scen.name.clone(),
            load_scale: scen.load_scale,
            operating_points: 0,
            solved_points: 0,
            violated_points: 0,
            violation_rate_percent: 0.0,
            violations_by_kind: BTreeMap::new(),
            min_vm_pu: None,
            max_vm_pu: None,
            max_loading_percent: None,
            redispatch: RedispatchCounts::default(),
            import_energy_without_mwh: 0.0,
            import_energy_with_mwh: 0.0,
            import_reduction_mwh: 0.0,
            contingency: None,
            voltage_envelope: BTreeMap::new(),
            delta_summary: BTreeMap::new(),
            failures: Vec::new(),
        }
    }
}

/// Everything `metrics.json` carries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub horizon_start: DateTime<Utc>,
    pub horizon_end: DateTime<Utc>,
    pub operating_points: usize,
    pub gap_events: usize,
    pub base_case: BaseCaseMetrics,
    pub scenarios: Vec<ScenarioMetrics>,
    #[serde(skip)]
    pub timings: Timings,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn fmt_dist(d: &Option<Distribution>) -> String {
    match d {
        None => "-".into(),
        Some(d) => format!(
            "{:.4} / {:.4} / {:.4} / {:.4} / {:.4} (mean {:.4})",
            d.min, d.q1, d.median, d.q3, d.max, d.mean
        ),
    }
}

/// Renders `summary.md`.
pub fn render_summary(metrics: &RunMetrics, inputs: &Inputs) -> String {
    let mut s = String::new();
    let push = |s: &mut String, line: String| {
        s.push_str(&line);
        s.push('\n');
    };

    push(&mut s, "# Run summary".into());
    push(&mut s, String::new());
    push(
        &mut s,
        format!(
            "Horizon {} to {}: {} operating points across {} substations; {} gap events.",
            metrics.horizon_start.to_rfc3339_opts(SecondsFormat::Secs, true),
            metrics.horizon_end.to_rfc3339_opts(SecondsFormat::Secs, true),
            metrics.operating_points,
            inputs.map.entries.len(),
            metrics.gap_events
        ),
    );

    let b = &metrics.base_case;
    push(&mut s, String::new());
    push(&mut s, "## Base case".into());
    push(&mut s, String::new());
    push(
        &mut s,
        format!(
            "- {} operating points; {} violated before adjustment ({:.3}%); {} adjusted",
            b.operating_points, b.violated_points, b.violation_rate_percent, b.adjusted_points
        ),
    );
    push(
        &mut s,
        format!(
            "- raw extremes: {:.4} to {:.4} pu, worst loading {:.2}%",
            b.pre_min_vm_pu, b.pre_max_vm_pu, b.pre_max_loading_percent
        ),
    );
    push(
        &mut s,
        format!("- import energy of the adopted base case: {:.3} MWh", b.import_energy_mwh),
    );

    push(&mut s, String::new());
    push(&mut s, "## Scenarios".into());
    push(&mut s, String::new());
    push(
        &mut s,
        "| scenario | scale | solved | violated | rate % | min V | max V | max load % \
         | redispatch opt/att | import w/o (MWh) | import w/ (MWh) | reduction (MWh) |"
            .into(),
    );
    push(&mut s, "|---|---|---|---|---|---|---|---|---|---|---|---|".into());
    for m in &metrics.scenarios {
        push(
            &mut s,
            format!(
                "| {} | {} | {}/{} | {} | {:.3} | {} | {} | {} | {}/{} | {:.3} | {:.3} | {:.3} |",
                m.name,
                m.load_scale,
                m.solved_points,
                m.operating_points,
                m.violated_points,
                m.violation_rate_percent,
                fmt_opt(m.min_vm_pu),
                fmt_opt(m.max_vm_pu),
                fmt_opt(m.max_loading_percent),
                m.redispatch.optimal,
                m.redispatch.attempted,
                m.import_energy_without_mwh,
                m.import_energy_with_mwh,
                m.import_reduction_mwh
            ),
        );
    }

    let with_cae: Vec<&ScenarioMetrics> = metrics
        .scenarios
        .iter()
        .filter(|m| m.contingency.is_some())
        .collect();
    if !with_cae.is_empty() {
        push(&mut s, String::new());
        push(&mut s, "## Contingency analysis".into());
        push(&mut s, String::new());
        push(
            &mut s,
            "| scenario | timestamps | cases | secure | violated | diverged | degenerate \
             | preventive opt/att |"
                .into(),
        );
        push(&mut s, "|---|---|---|---|---|---|---|---|".into());
        for m in with_cae {
            let c = m.contingency.as_ref().expect("filtered on presence");
            push(
                &mut s,
                format!(
                    "| {} | {} | {} | {} | {} | {} | {} | {}/{} |",
                    m.name,
                    c.timestamps,
                    c.cases,
                    c.secure,
                    c.violated,
                    c.diverged,
                    c.degenerate,
                    c.preventive.optimal,
                    c.preventive.attempted
                ),
            );
        }
    }

    for m in &metrics.scenarios {
        let active: Vec<(&u32, &GenDeltaSummary)> = m
            .delta_summary
            .iter()
            .filter(|(_, d)| d.activations > 0)
            .collect();
        if active.is_empty() {
            continue;
        }
        push(&mut s, String::new());
        push(&mut s, format!("## Activations: {}", m.name));
        push(&mut s, String::new());
        push(
            &mut s,
            "| generator | activations | dP MW min/q1/med/q3/max | dQ MVAr min/q1/med/q3/max |"
                .into(),
        );
        push(&mut s, "|---|---|---|---|".into());
        for (gen, d) in active {
            push(
                &mut s,
                format!("| {} | {} | {} | {} |", gen, d.activations, fmt_dist(&d.p), fmt_dist(&d.q)),
            );
        }
    }

    let failures: usize = metrics.scenarios.iter().map(|m| m.failures.len()).sum();
    if failures > 0 {
        push(&mut s, String::new());
        push(&mut s, "## Recorded failures".into());
        push(&mut s, String::new());
        for m in &metrics.scenarios {
            for f in m.failures.iter().take(20) {
                push(
                    &mut s,
                    format!(
                        "- {} {} [{}]: {}",
                        m.name,
                        f.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
                        f.context,
                        f.reason
                    ),
                );
            }
            if m.failures.len() > 20 {
                push(&mut s, format!("- {} more in `{}`", m.failures.len() - 20, m.name));
            }
        }
    }

    let t = &metrics.timings;
    push(&mut s, String::new());
    push(&mut s, "## Wall clock (non-normative, excluded from metrics.json)".into());
    push(&mut s, String::new());
    push(&mut s, format!("- base case construction: {:.2} s", t.base_case_s));
    push(
        &mut s,
        format!(
            "- scenario sweeps: power flow {:.2} s, assessment {:.2} s, contingencies {:.2} s, \
             redispatch {:.2} s",
            t.powerflow_s, t.rsae_s, t.cae_s, t.smfae_s
        ),
    );
    push(&mut s, format!("- total: {:.2} s", t.total_s));
    s
}

fn float_field(v: f64) -> String {
    format!("{v}")
}

/// Reads `metrics.json` back from a run directory.
pub fn load_metrics(run_dir: &Path) -> Result<RunMetrics> {
    let path = run_dir.join("metrics.json");
    let raw = std::fs::read_to_string(&path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&raw).map_err(|e| Error::data(format!("invalid {}: {e}", path.display())))
}

/// Regenerates report files from a run directory's persisted artifacts.
///
/// Emits `voltage_envelope.csv` (per-bus extremes of the reference
/// scenario after redispatch), `delta_distributions.csv` (recomputed from
/// `deltas.csv`) and `import_totals.csv` (recomputed from
/// `import_comparison.csv`), cross-checking the import aggregates against
/// `metrics.json` to 1e-6 relative.
pub fn regenerate(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let metrics = load_metrics(run_dir)?;
    let mut written = Vec::new();

    let reference = metrics
        .scenarios
        .iter()
        .find(|m| m.name == "base")
        .or_else(|| metrics.scenarios.iter().find(|m| (m.load_scale - 1.0).abs() < 1e-12))
        .or_else(|| metrics.scenarios.first())
        .ok_or_else(|| Error::data("metrics.json lists no scenarios"))?;
    let path = run_dir.join("voltage_envelope.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["bus", "min_v", "max_v"])?;
    for (bus, e) in &reference.voltage_envelope {
        w.write_record([bus.to_string(), float_field(e.min_after), float_field(e.max_after)])?;
    }
    w.flush()?;
    written.push(path);

    let deltas_path = run_dir.join("deltas.csv");
    let mut grouped: BTreeMap<(String, u32), Vec<(f64, f64)>> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(&deltas_path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", deltas_path.display())))?;
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| Error::data(format!("{}: short row", deltas_path.display())))
        };
        if field(2)? != "normal" {
            continue;
        }
        let scenario = field(0)?.to_string();
        let gen: u32 = field(3)?
            .parse()
            .map_err(|e| Error::data(format!("{}: bad generator id: {e}", deltas_path.display())))?;
        let dp: f64 = field(4)?
            .parse()
            .map_err(|e| Error::data(format!("{}: bad delta_p_mw: {e}", deltas_path.display())))?;
        let dq: f64 = field(5)?
            .parse()
            .map_err(|e| Error::data(format!("{}: bad delta_q_mvar: {e}", deltas_path.display())))?;
        grouped.entry((scenario, gen)).or_default().push((dp, dq));
    }
    let path = run_dir.join("delta_distributions.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "scenario",
        "generator",
        "channel",
        "activations",
        "count",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "mean",
    ])?;
    for ((scenario, gen), pairs) in &grouped {
        let d = summarize_deltas(pairs);
        for (channel, dist) in [("p_mw", &d.p), ("q_mvar", &d.q)] {
            let mut row = vec![
                scenario.clone(),
                gen.to_string(),
                channel.to_string(),
                d.activations.to_string(),
            ];
            match dist {
                Some(x) => row.extend([
                    x.count.to_string(),
                    float_field(x.min),
                    float_field(x.q1),
                    float_field(x.median),
                    float_field(x.q3),
                    float_field(x.max),
                    float_field(x.mean),
                ]),
                None => row.extend(std::iter::repeat("".to_string()).take(7)),
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    written.push(path);

    let imports_path = run_dir.join("import_comparison.csv");
    let mut totals: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(&imports_path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", imports_path.display())))?;
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| Error::data(format!("{}: short row", imports_path.display())))
        };
        let scenario = field(0)?.to_string();
        let without: f64 = field(2)?
            .parse()
            .map_err(|e| Error::data(format!("{}: bad p_ext_without_mw: {e}", imports_path.display())))?;
        let with: f64 = field(3)?
            .parse()
            .map_err(|e| Error::data(format!("{}: bad p_ext_with_mw: {e}", imports_path.display())))?;
        let t = totals.entry(scenario).or_insert((0.0, 0.0));
        t.0 += without * super::STEP_HOURS;
        t.1 += with * super::STEP_HOURS;
    }
    for m in &metrics.scenarios {
        let (without, with) = totals.get(&m.name).copied().unwrap_or((0.0, 0.0));
        let reduction = without - with;
        let tol = 1e-6 * m.import_reduction_mwh.abs().max(1.0);
        if (reduction - m.import_reduction_mwh).abs() > tol {
            return Err(Error::data(format!(
                "import_comparison.csv disagrees with metrics.json for scenario `{}`: \
                 recomputed reduction {reduction} MWh vs reported {} MWh",
                m.name, m.import_reduction_mwh
            )));
        }
    }
    let path = run_dir.join("import_totals.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "scenario",
        "import_energy_without_mwh",
        "import_energy_with_mwh",
        "import_reduction_mwh",
    ])?;
    for (scenario, (without, with)) in &totals {
        w.write_record([
            scenario.clone(),
            float_field(*without),
            float_field(*with),
            float_field(*without - *with),
        ])?;
    }
    w.flush()?;
    written.push(path);

    Ok(written)
}
