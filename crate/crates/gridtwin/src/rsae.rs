//! Steady-state assessment: checks a solved power flow against voltage-band
//! and thermal limits and emits a deterministic violation report.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{BranchRef, BusId};
use crate::powerflow::PowerFlowSolution;

/// Operating limits for secure operation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecurityLimits {
    /// Lower voltage bound (pu).
    pub v_min_pu: f64,
    /// Upper voltage bound (pu).
    pub v_max_pu: f64,
    /// Maximum branch loading (percent of the thermal rating).
    pub loading_max_percent: f64,
}

impl Default for SecurityLimits {
    fn default() -> Self {
        SecurityLimits {
            v_min_pu: 0.95,
            v_max_pu: 1.05,
            loading_max_percent: 90.0,
        }
    }
}

impl SecurityLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min_pu.is_finite() && self.v_max_pu.is_finite() && self.v_min_pu > 0.0) {
            return Err(Error::data("voltage limits must be finite and positive"));
        }
        if self.v_min_pu >= self.v_max_pu {
            return Err(Error::data(format!(
                "v_min_pu {} must be below v_max_pu {}",
                self.v_min_pu, self.v_max_pu
            )));
        }
        if !(self.loading_max_percent.is_finite() && self.loading_max_percent > 0.0) {
            return Err(Error::data("loading_max_percent must be positive"));
        }
        Ok(())
    }
}

/// Kind of limit breach, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Overvoltage,
    Undervoltage,
    Thermal,
}

/// Element a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementRef {
    Bus(BusId),
    Branch(BranchRef),
}

impl std::fmt::Display for ElementRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ElementRef::Bus(id) => write!(f, "bus:{id}"),
            ElementRef::Branch(b) => write!(f, "{b}"),
        }
    }
}

/// One limit breach. `value` carries pu for voltages and percent for
/// thermal loadings, `limit` the bound that was crossed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub element: ElementRef,
    pub value: f64,
    pub limit: f64,
}

/// Situation a report was produced in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssessmentContext {
    /// Intact network.
    Normal,
    /// Post-outage state of the given branch.
    Contingency(BranchRef),
}

/// Deterministic list of violations for one solved state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViolationReport {
    pub timestamp: DateTime<Utc>,
    pub context: AssessmentContext,
    pub violations: Vec<Violation>,
}

impl ViolationReport {
    pub fn is_secure(&self) -> bool {
        self.violations.is_empty()
    }

    /// Serializes to one JSON line (for `violations.jsonl`).
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Checks a solved state against the limits.
///
/// Bounds are inclusive: a bus exactly at `v_max_pu` or a branch exactly at
/// `loading_max_percent` is secure. Violations are ordered by kind
/// (overvoltage, undervoltage, thermal) and element id within each kind.
pub fn assess(
    solution: &PowerFlowSolution,
    limits: &SecurityLimits,
    context: AssessmentContext,
) -> Result<ViolationReport> {
    limits.validate()?;
    let mut violations = Vec::new();
    for v in &solution.voltages {
        if v.vm_pu > limits.v_max_pu {
            violations.push(Violation {
                kind: ViolationKind::Overvoltage,
                element: ElementRef::Bus(v.bus),
                value: v.vm_pu,
                limit: limits.v_max_pu,
            });
        } else if v.vm_pu < limits.v_min_pu {
            violations.push(Violation {
                kind: ViolationKind::Undervoltage,
                element: ElementRef::Bus(v.bus),
                value: v.vm_pu,
                limit: limits.v_min_pu,
            });
        }
    }
    for b in &solution.branches {
        if b.loading_percent > limits.loading_max_percent {
            violations.push(Violation {
                kind: ViolationKind::Thermal,
                element: ElementRef::Branch(b.branch),
                value: b.loading_percent,
                limit: limits.loading_max_percent,
            });
        }
    }
    violations.sort_by(|a, b| (a.kind, a.element).cmp(&(b.kind, b.element)));
    Ok(ViolationReport {
        timestamp: solution.timestamp,
        context,
        violations,
    })
}
