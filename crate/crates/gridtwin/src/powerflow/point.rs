//! Scheduled injections for one time step.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{AdmittanceMatrix, Network};

/// Active/reactive pair in MW / MVAr.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PqMw {
    pub p_mw: f64,
    pub q_mvar: f64,
}

impl PqMw {
    pub fn new(p_mw: f64, q_mvar: f64) -> Self {
        PqMw { p_mw, q_mvar }
    }
}

/// One time step of scheduled generator outputs and load demands.
///
/// Generator values are injections (positive feeds the grid), load values
/// consumption (positive draws from the grid).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub timestamp: DateTime<Utc>,
    pub generators: BTreeMap<u32, PqMw>,
    pub loads: BTreeMap<u32, PqMw>,
}

impl OperatingPoint {
    pub fn new(timestamp: DateTime<Utc>) -> Self {
        OperatingPoint {
            timestamp,
            generators: BTreeMap::new(),
            loads: BTreeMap::new(),
        }
    }

    /// Checks completeness against a network: every in-service generator and
    /// load carries exactly one finite entry, and no entry dangles.
    pub fn validate(&self, net: &Network) -> Result<()> {
        for g in net.generators.iter().filter(|g| g.in_service) {
            match self.generators.get(&g.id) {
                None => {
                    return Err(Error::data(format!(
                        "operating point at {} misses generator {}",
                        self.timestamp, g.id
                    )))
                }
                Some(v) if !(v.p_mw.is_finite() && v.q_mvar.is_finite()) => {
                    return Err(Error::data(format!(
                        "operating point at {}: generator {} has non-finite values",
                        self.timestamp, g.id
                    )))
                }
                _ => {}
            }
        }
        for l in net.loads.iter().filter(|l| l.in_service) {
            match self.loads.get(&l.id) {
                None => {
                    return Err(Error::data(format!(
                        "operating point at {} misses load {}",
                        self.timestamp, l.id
                    )))
                }
                Some(v) if !(v.p_mw.is_finite() && v.q_mvar.is_finite()) => {
                    return Err(Error::data(format!(
                        "operating point at {}: load {} has non-finite values",
                        self.timestamp, l.id
                    )))
                }
                _ => {}
            }
        }
        for id in self.generators.keys() {
            match net.generator(*id) {
                Some(g) if g.in_service => {}
                Some(_) => {
                    return Err(Error::data(format!(
                        "operating point at {} schedules out-of-service generator {id}",
                        self.timestamp
                    )))
                }
                None => {
                    return Err(Error::data(format!(
                        "operating point at {} references unknown generator {id}",
                        self.timestamp
                    )))
                }
            }
        }
        for id in self.loads.keys() {
            match net.load(*id) {
                Some(l) if l.in_service => {}
                Some(_) => {
                    return Err(Error::data(format!(
                        "operating point at {} schedules out-of-service load {id}",
                        self.timestamp
                    )))
                }
                None => {
                    return Err(Error::data(format!(
                        "operating point at {} references unknown load {id}",
                        self.timestamp
                    )))
                }
            }
        }
        Ok(())
    }

    /// Drops entries for units that are out of service in `net`; used after
    /// an outage prunes islanded substations.
    pub fn restricted_to(&self, net: &Network) -> OperatingPoint {
        let mut out = OperatingPoint::new(self.timestamp);
        for (id, v) in &self.generators {
            if net.generator(*id).map(|g| g.in_service).unwrap_or(false) {
                out.generators.insert(*id, *v);
            }
        }
        for (id, v) in &self.loads {
            if net.load(*id).map(|l| l.in_service).unwrap_or(false) {
                out.loads.insert(*id, *v);
            }
        }
        out
    }

    /// Net scheduled complex injection per admittance-matrix row (pu).
    pub fn bus_injections_pu(&self, net: &Network, adm: &AdmittanceMatrix) -> Vec<Complex64> {
        let mut s = vec![Complex64::new(0.0, 0.0); adm.n()];
        for g in net.generators.iter().filter(|g| g.in_service) {
            if let Some(v) = self.generators.get(&g.id) {
                if let Some(row) = net.bus_idx(g.bus).and_then(|i| adm.row_of[i]) {
                    s[row] += Complex64::new(v.p_mw, v.q_mvar) / net.s_base_mva;
                }
            }
        }
        for l in net.loads.iter().filter(|l| l.in_service) {
            if let Some(v) = self.loads.get(&l.id) {
                if let Some(row) = net.bus_idx(l.bus).and_then(|i| adm.row_of[i]) {
                    s[row] -= Complex64::new(v.p_mw, v.q_mvar) / net.s_base_mva;
                }
            }
        }
        s
    }

    /// Returns a copy with both load channels scaled by `factor`.
    pub fn with_scaled_loads(&self, factor: f64) -> OperatingPoint {
        let mut out = self.clone();
        for v in out.loads.values_mut() {
            v.p_mw *= factor;
            v.q_mvar *= factor;
        }
        out
    }
}
