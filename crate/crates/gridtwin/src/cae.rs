//! Contingency assessment: exhaustive N-1 branch outage sweep.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{apply_outage, build_admittance, BranchRef, BusId, Network};
use crate::powerflow::{solve_with_admittance, OperatingPoint, SolverOptions};
use crate::rsae::{assess, AssessmentContext, SecurityLimits, ViolationReport};

/// Post-outage classification of one contingency case.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ContingencyOutcome {
    /// Converged without limit violations.
    Secure,
    /// Converged with the listed violations.
    Violations { report: ViolationReport },
    /// Newton iteration did not converge on the post-outage network.
    Diverged { last_mismatch_pu: f64 },
    /// The outage disconnected every non-slack bus.
    DegenerateTopology,
}

/// Solved post-outage extremes, absent when no power flow was solved.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CaseSummary {
    pub min_vm_pu: f64,
    pub max_vm_pu: f64,
    pub max_loading_percent: f64,
}

/// One entry of the N-1 sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContingencyCase {
    pub element: BranchRef,
    pub islanded_buses: BTreeSet<BusId>,
    pub outcome: ContingencyOutcome,
    pub summary: Option<CaseSummary>,
}

impl ContingencyCase {
    pub fn is_secure(&self) -> bool {
        matches!(self.outcome, ContingencyOutcome::Secure)
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// All in-service branches in deterministic order: lines by ascending id,
/// then transformers by ascending id.
pub fn enumerate_contingencies(net: &Network) -> Vec<BranchRef> {
    net.in_service_branches()
}

/// Assesses a single branch outage at one operating point.
///
/// The outage is applied to a copy, islanded units drop out of the operating
/// point, and the remaining network is solved and assessed. Divergence and
/// degenerate topologies are outcomes, not errors; only data-level problems
/// propagate as `Err`.
pub fn assess_contingency(
    net: &Network,
    point: &OperatingPoint,
    element: BranchRef,
    limits: &SecurityLimits,
    opts: &SolverOptions,
) -> Result<ContingencyCase> {
    let (pruned, islanded) = match apply_outage(net, element) {
        Ok(x) => x,
        Err(Error::DegenerateTopology(_)) => {
            return Ok(ContingencyCase {
                element,
                islanded_buses: net
                    .buses
                    .iter()
                    .enumerate()
                    .filter(|(i, b)| *i != net.slack_idx() && b.in_service)
                    .map(|(_, b)| b.id)
                    .collect(),
                outcome: ContingencyOutcome::DegenerateTopology,
                summary: None,
            })
        }
        Err(e) => return Err(e),
    };

    let adm = build_admittance(&pruned)?;
    let restricted = point.restricted_to(&pruned);
    match solve_with_admittance(&pruned, &adm, &restricted, opts) {
        Ok(solution) => {
            let summary = Some(CaseSummary {
                min_vm_pu: solution.min_vm_pu(),
                max_vm_pu: solution.max_vm_pu(),
                max_loading_percent: solution.max_loading_percent(),
            });
            let report = assess(&solution, limits, AssessmentContext::Contingency(element))?;
            let outcome = if report.is_secure() {
                ContingencyOutcome::Secure
            } else {
                ContingencyOutcome::Violations { report }
            };
            Ok(ContingencyCase {
                element,
                islanded_buses: islanded,
                outcome,
                summary,
            })
        }
        Err(Error::Diverged { last_mismatch, .. }) => Ok(ContingencyCase {
            element,
            islanded_buses: islanded,
            outcome: ContingencyOutcome::Diverged {
                last_mismatch_pu: last_mismatch,
            },
            summary: None,
        }),
        Err(Error::SingularSystem { .. }) => Ok(ContingencyCase {
            element,
            islanded_buses: islanded,
            outcome: ContingencyOutcome::Diverged {
                last_mismatch_pu: f64::INFINITY,
            },
            summary: None,
        }),
        Err(e) => Err(e),
    }
}

/// Runs the full N-1 sweep for one operating point. Cases are evaluated in
/// parallel and returned in enumeration order.
pub fn sweep(
    net: &Network,
    point: &OperatingPoint,
    limits: &SecurityLimits,
    opts: &SolverOptions,
) -> Result<Vec<ContingencyCase>> {
    enumerate_contingencies(net)
        .into_par_iter()
        .map(|el| assess_contingency(net, point, el, limits, opts))
        .collect()
}

/// Aggregate counts over a sweep.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SweepStats {
    pub cases: usize,
    pub secure: usize,
    pub violated: usize,
    pub diverged: usize,
    pub degenerate: usize,
}

impl SweepStats {
    pub fn from_cases(cases: &[ContingencyCase]) -> Self {
        let mut s = SweepStats {
            cases: cases.len(),
            ..Default::default()
        };
        for c in cases {
            match c.outcome {
                ContingencyOutcome::Secure => s.secure += 1,
                ContingencyOutcome::Violations { .. } => s.violated += 1,
                ContingencyOutcome::Diverged { .. } => s.diverged += 1,
                ContingencyOutcome::DegenerateTopology => s.degenerate += 1,
            }
        }
        s
    }
}

/// Writes the sweep summary CSV
/// (`element,outcome,min_vm_pu,max_vm_pu,max_loading_percent,islanded_buses`).
pub fn write_sweep_csv<W: std::io::Write>(
    w: W,
    timestamp: DateTime<Utc>,
    cases: &[ContingencyCase],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "timestamp",
        "element",
        "outcome",
        "min_vm_pu",
        "max_vm_pu",
        "max_loading_percent",
        "islanded_buses",
    ])?;
    for c in cases {
        let outcome = match &c.outcome {
            ContingencyOutcome::Secure => "secure",
            ContingencyOutcome::Violations { .. } => "violations",
            ContingencyOutcome::Diverged { .. } => "diverged",
            ContingencyOutcome::DegenerateTopology => "degenerate-topology",
        };
        let (vmin, vmax, load) = match c.summary {
            Some(s) => (
                format!("{}", s.min_vm_pu),
                format!("{}", s.max_vm_pu),
                format!("{}", s.max_loading_percent),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        wtr.write_record([
            timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            c.element.to_string(),
            outcome.to_string(),
            vmin,
            vmax,
            load,
            c.islanded_buses.len().to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
