//! Static network model: buses, branches, shunts and the connected units.
//!
//! Networks are loaded from a JSON document, validated and kept immutable
//! afterwards; topology changes (outages) produce modified copies. All
//! electrical quantities are converted to per-unit on the system base at the
//! point of use, the stored fields keep the units of the input data.

mod admittance;
mod outage;

pub use admittance::{build_admittance, AdmittanceMatrix, BranchAdmittance};
pub use outage::apply_outage;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type BusId = u32;

fn default_true() -> bool {
    true
}

/// Role of a bus in the power-flow formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pq,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    pub name: String,
    /// Nominal voltage (kV).
    pub vn_kv: f64,
    pub kind: BusKind,
    #[serde(skip, default = "default_true")]
    pub in_service: bool,
}

/// Overhead line or cable with a pi equivalent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub id: u32,
    pub from_bus: BusId,
    pub to_bus: BusId,
    /// Length (km).
    pub length_km: f64,
    /// Series resistance (ohm/km).
    pub r_ohm_per_km: f64,
    /// Series reactance (ohm/km).
    pub x_ohm_per_km: f64,
    /// Shunt capacitance (nF/km).
    pub c_nf_per_km: f64,
    /// Thermal current rating (kA).
    pub max_i_ka: f64,
    #[serde(skip, default = "default_true")]
    pub in_service: bool,
}

/// Two-winding transformer, modelled as a series impedance at unit tap.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transformer {
    pub id: u32,
    pub hv_bus: BusId,
    pub lv_bus: BusId,
    /// Rated apparent power (MVA).
    pub sn_mva: f64,
    /// Short-circuit voltage (percent of rated).
    pub vk_percent: f64,
    /// Resistive part of the short-circuit voltage (percent).
    pub vkr_percent: f64,
    /// Rated HV side voltage (kV).
    pub vn_hv_kv: f64,
    /// Rated LV side voltage (kV).
    pub vn_lv_kv: f64,
    #[serde(skip, default = "default_true")]
    pub in_service: bool,
}

/// Fixed shunt element; positive `q_mvar` consumes reactive power (reactor),
/// negative injects (capacitor).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shunt {
    pub id: u32,
    pub bus: BusId,
    /// Reactive consumption at 1.0 pu voltage (MVAr).
    pub q_mvar: f64,
    /// Active losses at 1.0 pu voltage (MW).
    pub p_mw: f64,
    #[serde(skip, default = "default_true")]
    pub in_service: bool,
}

/// Aggregated distributed generation behind one substation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub id: u32,
    pub bus: BusId,
    /// Historical maximum active output (MW); bounds the redispatch range.
    pub p_hist_max_mw: f64,
    #[serde(skip, default = "default_true")]
    pub in_service: bool,
}

/// Aggregated consumption behind one substation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub id: u32,
    pub bus: BusId,
    #[serde(skip, default = "default_true")]
    pub in_service: bool,
}

/// Interconnection to the upstream transmission system; owns the slack bus.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalGrid {
    pub bus: BusId,
    /// Controlled voltage magnitude at the slack bus (pu).
    pub vm_pu: f64,
}

/// Branch identifier used by contingency enumeration and reporting.
///
/// Lines and transformers number their ids independently; the `Ord`
/// implementation (lines first, then transformers, each by ascending id)
/// fixes the deterministic sweep order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchRef {
    Line(u32),
    Transformer(u32),
}

impl fmt::Display for BranchRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchRef::Line(id) => write!(f, "line:{id}"),
            BranchRef::Transformer(id) => write!(f, "transformer:{id}"),
        }
    }
}

impl FromStr for BranchRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, id) = s
            .split_once(':')
            .ok_or_else(|| Error::data(format!("malformed branch id `{s}`, expected `line:<id>` or `transformer:<id>`")))?;
        let id: u32 = id
            .parse()
            .map_err(|_| Error::data(format!("malformed branch id `{s}`: `{id}` is not an integer")))?;
        match kind {
            "line" => Ok(BranchRef::Line(id)),
            "transformer" => Ok(BranchRef::Transformer(id)),
            _ => Err(Error::data(format!(
                "malformed branch id `{s}`: unknown element kind `{kind}`"
            ))),
        }
    }
}

/// Validated network. Buses are kept sorted by id; element order follows the
/// input document after a stable sort by id, so every traversal of the model
/// is deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub transformers: Vec<Transformer>,
    pub shunts: Vec<Shunt>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub ext_grid: ExternalGrid,
    /// System apparent-power base (MVA).
    pub s_base_mva: f64,
    /// System frequency (Hz).
    pub f_hz: f64,
    #[serde(skip)]
    bus_index: BTreeMap<BusId, usize>,
    #[serde(skip)]
    slack: usize,
}

/// Loads a network document from a file.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read network file {}: {e}", path.display())))?;
    network_from_json(&raw)
}

/// Parses and validates a network document from a JSON string.
pub fn network_from_json(raw: &str) -> Result<Network> {
    let net: Network =
        serde_json::from_str(raw).map_err(|e| Error::data(format!("invalid network document: {e}")))?;
    net.validated()
}

/// Raw element collections for [`Network::from_parts`].
#[derive(Debug, Clone, Default)]
pub struct NetworkParts {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub transformers: Vec<Transformer>,
    pub shunts: Vec<Shunt>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
}

impl Network {
    /// Assembles and validates a network from element collections.
    pub fn from_parts(
        parts: NetworkParts,
        ext_grid: ExternalGrid,
        s_base_mva: f64,
        f_hz: f64,
    ) -> Result<Network> {
        Network {
            buses: parts.buses,
            lines: parts.lines,
            transformers: parts.transformers,
            shunts: parts.shunts,
            generators: parts.generators,
            loads: parts.loads,
            ext_grid,
            s_base_mva,
            f_hz,
            bus_index: BTreeMap::new(),
            slack: 0,
        }
        .validated()
    }

    /// Runs full validation and finalizes the derived lookup tables.
    /// Consumes `self` so an unvalidated value can never escape.
    pub fn validated(mut self) -> Result<Network> {
        if !(self.s_base_mva.is_finite() && self.s_base_mva > 0.0) {
            return Err(Error::data("s_base_mva must be finite and positive"));
        }
        if !(self.f_hz.is_finite() && self.f_hz > 0.0) {
            return Err(Error::data("f_hz must be finite and positive"));
        }
        if self.buses.is_empty() {
            return Err(Error::data("network has no buses"));
        }

        self.buses.sort_by_key(|b| b.id);
        self.lines.sort_by_key(|l| l.id);
        self.transformers.sort_by_key(|t| t.id);
        self.shunts.sort_by_key(|s| s.id);
        self.generators.sort_by_key(|g| g.id);
        self.loads.sort_by_key(|l| l.id);

        self.bus_index.clear();
        for (idx, bus) in self.buses.iter().enumerate() {
            if self.bus_index.insert(bus.id, idx).is_some() {
                return Err(Error::data(format!("duplicate bus id {}", bus.id)));
            }
            if !(bus.vn_kv.is_finite() && bus.vn_kv > 0.0) {
                return Err(Error::data(format!("bus {}: vn_kv must be positive", bus.id)));
            }
        }

        let slacks: Vec<BusId> = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .collect();
        match slacks.as_slice() {
            [one] => self.slack = self.bus_index[one],
            [] => return Err(Error::data("network has no slack bus")),
            many => {
                return Err(Error::data(format!(
                    "network has {} slack buses ({:?}), exactly one is required",
                    many.len(),
                    many
                )))
            }
        }

        if self.bus_index.get(&self.ext_grid.bus) != Some(&self.slack) {
            return Err(Error::data(format!(
                "ext_grid must attach to the slack bus, references bus {}",
                self.ext_grid.bus
            )));
        }
        if !(self.ext_grid.vm_pu.is_finite() && (0.9..=1.1).contains(&self.ext_grid.vm_pu)) {
            return Err(Error::data(format!(
                "ext_grid vm_pu {} outside the plausible band [0.9, 1.1]",
                self.ext_grid.vm_pu
            )));
        }

        let mut line_ids = BTreeSet::new();
        for line in &self.lines {
            if !line_ids.insert(line.id) {
                return Err(Error::data(format!("duplicate line id {}", line.id)));
            }
            let from = self.require_bus(line.from_bus, || format!("line {}", line.id))?;
            let to = self.require_bus(line.to_bus, || format!("line {}", line.id))?;
            if line.from_bus == line.to_bus {
                return Err(Error::data(format!("line {}: from_bus equals to_bus", line.id)));
            }
            if (from.vn_kv - to.vn_kv).abs() > 1e-9 * from.vn_kv {
                return Err(Error::data(format!(
                    "line {}: endpoints have different nominal voltages ({} kV vs {} kV)",
                    line.id, from.vn_kv, to.vn_kv
                )));
            }
            if !(line.length_km.is_finite() && line.length_km > 0.0) {
                return Err(Error::data(format!("line {}: length_km must be positive", line.id)));
            }
            for (v, name) in [
                (line.r_ohm_per_km, "r_ohm_per_km"),
                (line.x_ohm_per_km, "x_ohm_per_km"),
                (line.c_nf_per_km, "c_nf_per_km"),
            ] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::data(format!("line {}: {name} must be non-negative", line.id)));
                }
            }
            if !(line.max_i_ka.is_finite() && line.max_i_ka > 0.0) {
                return Err(Error::data(format!("line {}: max_i_ka must be positive", line.id)));
            }
        }

        let mut trafo_ids = BTreeSet::new();
        for t in &self.transformers {
            if !trafo_ids.insert(t.id) {
                return Err(Error::data(format!("duplicate transformer id {}", t.id)));
            }
            let hv = self.require_bus(t.hv_bus, || format!("transformer {}", t.id))?;
            let lv = self.require_bus(t.lv_bus, || format!("transformer {}", t.id))?;
            if t.hv_bus == t.lv_bus {
                return Err(Error::data(format!("transformer {}: hv_bus equals lv_bus", t.id)));
            }
            if !(t.sn_mva.is_finite() && t.sn_mva > 0.0) {
                return Err(Error::data(format!("transformer {}: sn_mva must be positive", t.id)));
            }
            if !(t.vk_percent.is_finite() && t.vkr_percent.is_finite() && t.vkr_percent > 0.0 && t.vkr_percent <= t.vk_percent)
            {
                return Err(Error::data(format!(
                    "transformer {}: vkr_percent must satisfy 0 < vkr <= vk",
                    t.id
                )));
            }
            for (rated, bus, side) in [(t.vn_hv_kv, hv, "hv"), (t.vn_lv_kv, lv, "lv")] {
                if !(rated.is_finite() && rated > 0.0) {
                    return Err(Error::data(format!("transformer {}: vn_{side}_kv must be positive", t.id)));
                }
                if (rated - bus.vn_kv).abs() > 1e-9 * bus.vn_kv {
                    return Err(Error::data(format!(
                        "transformer {}: vn_{side}_kv {} does not match bus {} nominal voltage {} (unit-tap model)",
                        t.id, rated, bus.id, bus.vn_kv
                    )));
                }
            }
        }

        let mut shunt_ids = BTreeSet::new();
        for s in &self.shunts {
            if !shunt_ids.insert(s.id) {
                return Err(Error::data(format!("duplicate shunt id {}", s.id)));
            }
            self.require_bus(s.bus, || format!("shunt {}", s.id))?;
            if !(s.q_mvar.is_finite() && s.p_mw.is_finite()) {
                return Err(Error::data(format!("shunt {}: p_mw/q_mvar must be finite", s.id)));
            }
        }

        let mut gen_ids = BTreeSet::new();
        for g in &self.generators {
            if !gen_ids.insert(g.id) {
                return Err(Error::data(format!("duplicate generator id {}", g.id)));
            }
            self.require_bus(g.bus, || format!("generator {}", g.id))?;
            if !(g.p_hist_max_mw.is_finite() && g.p_hist_max_mw >= 0.0) {
                return Err(Error::data(format!(
                    "generator {}: p_hist_max_mw must be non-negative",
                    g.id
                )));
            }
        }

        let mut load_ids = BTreeSet::new();
        for l in &self.loads {
            if !load_ids.insert(l.id) {
                return Err(Error::data(format!("duplicate load id {}", l.id)));
            }
            self.require_bus(l.bus, || format!("load {}", l.id))?;
        }

        let unreachable = self.unreachable_from_slack();
        if !unreachable.is_empty() {
            return Err(Error::data(format!(
                "buses not connected to the slack bus: {:?}",
                unreachable
            )));
        }

        Ok(self)
    }

    fn require_bus(&self, id: BusId, ctx: impl Fn() -> String) -> Result<&Bus> {
        self.bus_index
            .get(&id)
            .map(|&i| &self.buses[i])
            .ok_or_else(|| Error::data(format!("{}: references unknown bus {id}", ctx())))
    }

    /// Index of a bus in `buses`, if present.
    pub fn bus_idx(&self, id: BusId) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.bus_idx(id).map(|i| &self.buses[i])
    }

    /// Index of the slack bus in `buses`.
    pub fn slack_idx(&self) -> usize {
        self.slack
    }

    pub fn slack_bus(&self) -> &Bus {
        &self.buses[self.slack]
    }

    /// Base current (kA) at the given nominal voltage.
    pub fn i_base_ka(&self, vn_kv: f64) -> f64 {
        self.s_base_mva / (3.0_f64.sqrt() * vn_kv)
    }

    /// Base impedance (ohm) at the given nominal voltage.
    pub fn z_base_ohm(&self, vn_kv: f64) -> f64 {
        vn_kv * vn_kv / self.s_base_mva
    }

    pub fn line(&self, id: u32) -> Option<&Line> {
        self.lines.iter().find(|l| l.id == id)
    }

    pub fn transformer(&self, id: u32) -> Option<&Transformer> {
        self.transformers.iter().find(|t| t.id == id)
    }

    pub fn generator(&self, id: u32) -> Option<&Generator> {
        self.generators.iter().find(|g| g.id == id)
    }

    pub fn load(&self, id: u32) -> Option<&Load> {
        self.loads.iter().find(|l| l.id == id)
    }

    /// Endpoint bus ids of a branch (from/hv first).
    pub fn branch_buses(&self, branch: BranchRef) -> Option<(BusId, BusId)> {
        match branch {
            BranchRef::Line(id) => self.line(id).map(|l| (l.from_bus, l.to_bus)),
            BranchRef::Transformer(id) => self.transformer(id).map(|t| (t.hv_bus, t.lv_bus)),
        }
    }

    /// In-service branches in deterministic order: lines by id, then
    /// transformers by id.
    pub fn in_service_branches(&self) -> Vec<BranchRef> {
        let mut out = Vec::with_capacity(self.lines.len() + self.transformers.len());
        out.extend(
            self.lines
                .iter()
                .filter(|l| l.in_service)
                .map(|l| BranchRef::Line(l.id)),
        );
        out.extend(
            self.transformers
                .iter()
                .filter(|t| t.in_service)
                .map(|t| BranchRef::Transformer(t.id)),
        );
        out
    }

    /// Non-slack bus ids that cannot be reached from the slack bus over
    /// in-service branches.
    pub(crate) fn unreachable_from_slack(&self) -> BTreeSet<BusId> {
        let n = self.buses.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        let connect = |a: BusId, b: BusId, adj: &mut Vec<Vec<usize>>| {
            if let (Some(i), Some(j)) = (self.bus_idx(a), self.bus_idx(b)) {
                if self.buses[i].in_service && self.buses[j].in_service {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        };
        for l in self.lines.iter().filter(|l| l.in_service) {
            connect(l.from_bus, l.to_bus, &mut adj);
        }
        for t in self.transformers.iter().filter(|t| t.in_service) {
            connect(t.hv_bus, t.lv_bus, &mut adj);
        }

        let mut seen = vec![false; n];
        let mut stack = vec![self.slack];
        seen[self.slack] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        self.buses
            .iter()
            .enumerate()
            .filter(|(i, b)| !seen[*i] && b.in_service && *i != self.slack)
            .map(|(_, b)| b.id)
            .collect()
    }
}
