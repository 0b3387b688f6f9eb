//! Bus admittance matrix in per-unit on the system base.
//!
//! Lines use the pi equivalent: series impedance `(r + jx) * length` and the
//! total charging susceptance `2*pi*f*c*length` split half per end.
//! Transformers contribute their short-circuit impedance rescaled from the
//! nameplate base `sn_mva` to the system base, at unit tap and without a
//! magnetizing branch. Shunt elements enter the diagonal as `(p - jq)/s_base`
//! so that a reactor (`q > 0`) consumes reactive power at 1.0 pu voltage.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::{BranchRef, Network};

/// Per-branch admittance data for one in-service branch.
#[derive(Debug, Clone)]
pub struct BranchAdmittance {
    pub branch: BranchRef,
    /// Matrix row of the from (HV) end.
    pub from: usize,
    /// Matrix row of the to (LV) end.
    pub to: usize,
    pub y_series: Complex64,
    pub y_shunt_from: Complex64,
    pub y_shunt_to: Complex64,
    /// Current rating (pu). For lines this is `max_i_ka` over the base
    /// current; for transformers the rated current at nominal voltage,
    /// `sn_mva / s_base_mva`.
    pub i_max_pu: f64,
}

impl BranchAdmittance {
    pub fn is_transformer(&self) -> bool {
        matches!(self.branch, BranchRef::Transformer(_))
    }
}

/// Dense bus admittance matrix over the in-service buses of a network.
///
/// Out-of-service buses are excluded entirely; `rows` maps matrix rows back
/// to indices into `Network::buses` and `row_of` inverts that mapping.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    pub y: DMatrix<Complex64>,
    pub branches: Vec<BranchAdmittance>,
    /// Matrix row -> bus index in `Network::buses`.
    pub rows: Vec<usize>,
    /// Bus index in `Network::buses` -> matrix row.
    pub row_of: Vec<Option<usize>>,
    /// Matrix row of the slack bus.
    pub slack_row: usize,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.rows.len()
    }
}

/// Builds the admittance matrix of the in-service part of a network.
pub fn build_admittance(net: &Network) -> Result<AdmittanceMatrix> {
    let mut rows = Vec::new();
    let mut row_of = vec![None; net.buses.len()];
    for (idx, bus) in net.buses.iter().enumerate() {
        if bus.in_service {
            row_of[idx] = Some(rows.len());
            rows.push(idx);
        }
    }
    let n = rows.len();
    let slack_row = row_of[net.slack_idx()]
        .ok_or_else(|| Error::data("slack bus is out of service"))?;

    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut branches = Vec::new();

    let stamp = |from: usize, to: usize, ys: Complex64, ysh_f: Complex64, ysh_t: Complex64, y: &mut DMatrix<Complex64>| {
        y[(from, from)] += ys + ysh_f;
        y[(to, to)] += ys + ysh_t;
        y[(from, to)] -= ys;
        y[(to, from)] -= ys;
    };

    for line in net.lines.iter().filter(|l| l.in_service) {
        let fi = net.bus_idx(line.from_bus).expect("validated");
        let ti = net.bus_idx(line.to_bus).expect("validated");
        let (Some(from), Some(to)) = (row_of[fi], row_of[ti]) else {
            return Err(Error::data(format!(
                "line {} is in service but touches an out-of-service bus",
                line.id
            )));
        };
        let vn = net.buses[fi].vn_kv;
        let z_base = net.z_base_ohm(vn);
        let z = Complex64::new(
            line.r_ohm_per_km * line.length_km,
            line.x_ohm_per_km * line.length_km,
        ) / z_base;
        if z.norm() == 0.0 {
            return Err(Error::data(format!("line {}: zero-impedance branch", line.id)));
        }
        let y_series = z.inv();
        let b_total = 2.0 * std::f64::consts::PI * net.f_hz * line.c_nf_per_km * 1e-9 * line.length_km
            * z_base;
        let y_shunt = Complex64::new(0.0, b_total / 2.0);
        stamp(from, to, y_series, y_shunt, y_shunt, &mut y);
        branches.push(BranchAdmittance {
            branch: BranchRef::Line(line.id),
            from,
            to,
            y_series,
            y_shunt_from: y_shunt,
            y_shunt_to: y_shunt,
            i_max_pu: line.max_i_ka / net.i_base_ka(vn),
        });
    }

    for t in net.transformers.iter().filter(|t| t.in_service) {
        let hi = net.bus_idx(t.hv_bus).expect("validated");
        let li = net.bus_idx(t.lv_bus).expect("validated");
        let (Some(from), Some(to)) = (row_of[hi], row_of[li]) else {
            return Err(Error::data(format!(
                "transformer {} is in service but touches an out-of-service bus",
                t.id
            )));
        };
        let vx_percent = (t.vk_percent * t.vk_percent - t.vkr_percent * t.vkr_percent).sqrt();
        let z = Complex64::new(t.vkr_percent / 100.0, vx_percent / 100.0)
            * (net.s_base_mva / t.sn_mva);
        if z.norm() == 0.0 {
            return Err(Error::data(format!("transformer {}: zero-impedance branch", t.id)));
        }
        let y_series = z.inv();
        let zero = Complex64::new(0.0, 0.0);
        stamp(from, to, y_series, zero, zero, &mut y);
        branches.push(BranchAdmittance {
            branch: BranchRef::Transformer(t.id),
            from,
            to,
            y_series,
            y_shunt_from: zero,
            y_shunt_to: zero,
            i_max_pu: t.sn_mva / net.s_base_mva,
        });
    }

    for s in net.shunts.iter().filter(|s| s.in_service) {
        let bi = net.bus_idx(s.bus).expect("validated");
        let Some(row) = row_of[bi] else {
            return Err(Error::data(format!(
                "shunt {} is in service but sits on an out-of-service bus",
                s.id
            )));
        };
        y[(row, row)] += Complex64::new(s.p_mw, -s.q_mvar) / net.s_base_mva;
    }

    Ok(AdmittanceMatrix {
        y,
        branches,
        rows,
        row_of,
        slack_row,
    })
}
