//! Solved state and derived branch quantities.

use chrono::{DateTime, Utc};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::network::{AdmittanceMatrix, BranchRef, BusId, Network};
use crate::powerflow::OperatingPoint;

/// Voltage at one in-service bus.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BusVoltage {
    pub bus: BusId,
    pub vm_pu: f64,
    pub va_rad: f64,
}

/// Power flow over one in-service branch. `from` is the from/HV end.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BranchFlow {
    pub branch: BranchRef,
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub p_from_mw: f64,
    pub q_from_mvar: f64,
    pub p_to_mw: f64,
    pub q_to_mvar: f64,
    pub s_from_mva: f64,
    pub s_to_mva: f64,
    pub i_from_ka: f64,
    pub i_to_ka: f64,
    /// Percent of the thermal rating: current-based for lines,
    /// apparent-power-based for transformers, worst end in both cases.
    pub loading_percent: f64,
}

/// Converged power-flow state for one operating point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub timestamp: DateTime<Utc>,
    /// In-service buses in ascending id order.
    pub voltages: Vec<BusVoltage>,
    /// In-service branches, lines first, ascending id within each kind.
    pub branches: Vec<BranchFlow>,
    /// Active import from the external grid (MW, positive into the network).
    pub p_ext_mw: f64,
    /// Reactive import from the external grid (MVAr).
    pub q_ext_mvar: f64,
    pub iterations: usize,
    pub max_mismatch_pu: f64,
    /// Largest absolute mismatch before each Newton step, flat start first.
    pub mismatch_history: Vec<f64>,
}

impl PowerFlowSolution {
    pub fn voltage(&self, bus: BusId) -> Option<&BusVoltage> {
        self.voltages
            .binary_search_by_key(&bus, |v| v.bus)
            .ok()
            .map(|i| &self.voltages[i])
    }

    pub fn branch(&self, branch: BranchRef) -> Option<&BranchFlow> {
        self.branches.iter().find(|b| b.branch == branch)
    }

    pub fn min_vm_pu(&self) -> f64 {
        self.voltages.iter().map(|v| v.vm_pu).fold(f64::INFINITY, f64::min)
    }

    pub fn max_vm_pu(&self) -> f64 {
        self.voltages.iter().map(|v| v.vm_pu).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_loading_percent(&self) -> f64 {
        self.branches
            .iter()
            .map(|b| b.loading_percent)
            .fold(0.0, f64::max)
    }
}

pub(crate) fn assemble(
    net: &Network,
    adm: &AdmittanceMatrix,
    point: &OperatingPoint,
    s_inj_pu: &[Complex64],
    v: &[Complex64],
    history: &[f64],
) -> PowerFlowSolution {
    let voltages: Vec<BusVoltage> = adm
        .rows
        .iter()
        .map(|&bi| {
            let vv = v[adm.row_of[bi].unwrap()];
            BusVoltage {
                bus: net.buses[bi].id,
                vm_pu: vv.norm(),
                va_rad: vv.arg(),
            }
        })
        .collect();

    let mut branches = Vec::with_capacity(adm.branches.len());
    for ba in &adm.branches {
        let vf = v[ba.from];
        let vt = v[ba.to];
        let i_series = ba.y_series * (vf - vt);
        let i_from = i_series + ba.y_shunt_from * vf;
        let i_to = -i_series + ba.y_shunt_to * vt;
        let s_from = vf * i_from.conj();
        let s_to = vt * i_to.conj();

        let (from_bus, to_bus) = (net.buses[adm.rows[ba.from]].id, net.buses[adm.rows[ba.to]].id);
        let s_base = net.s_base_mva;
        let loading = match ba.branch {
            BranchRef::Line(id) => {
                let line = net.line(id).expect("branch from admittance");
                let vn = net.bus(from_bus).expect("validated").vn_kv;
                let i_base = net.i_base_ka(vn);
                100.0 * i_from.norm().max(i_to.norm()) * i_base / line.max_i_ka
            }
            BranchRef::Transformer(id) => {
                let t = net.transformer(id).expect("branch from admittance");
                100.0 * s_from.norm().max(s_to.norm()) * s_base / t.sn_mva
            }
        };
        let vn_from = net.bus(from_bus).expect("validated").vn_kv;
        let vn_to = net.bus(to_bus).expect("validated").vn_kv;
        branches.push(BranchFlow {
            branch: ba.branch,
            from_bus,
            to_bus,
            p_from_mw: s_from.re * s_base,
            q_from_mvar: s_from.im * s_base,
            p_to_mw: s_to.re * s_base,
            q_to_mvar: s_to.im * s_base,
            s_from_mva: s_from.norm() * s_base,
            s_to_mva: s_to.norm() * s_base,
            i_from_ka: i_from.norm() * net.i_base_ka(vn_from),
            i_to_ka: i_to.norm() * net.i_base_ka(vn_to),
            loading_percent: loading,
        });
    }

    // Slack closure: whatever balance the scheduled units leave at the slack
    // bus is supplied by the external grid.
    let slack = adm.slack_row;
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..adm.n() {
        acc += adm.y[(slack, j)] * v[j];
    }
    let s_calc = v[slack] * acc.conj();
    let s_ext = (s_calc - s_inj_pu[slack]) * net.s_base_mva;

    PowerFlowSolution {
        timestamp: point.timestamp,
        voltages,
        branches,
        p_ext_mw: s_ext.re,
        q_ext_mvar: s_ext.im,
        iterations: history.len().saturating_sub(1),
        max_mismatch_pu: *history.last().unwrap_or(&f64::NAN),
        mismatch_history: history.to_vec(),
    }
}
