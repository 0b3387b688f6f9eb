//! Compilation of a redispatch instance into the generic NLP form.
//!
//! Variables, all in per-unit on the system base:
//!
//! * voltage angle and magnitude at every non-slack in-service bus,
//! * active and reactive output of every adjustable generator
//!   (positive historical maximum),
//! * reactive slack-bus exchange, and the active exchange too when the
//!   slack policy leaves it free.
//!
//! Equalities are the active and reactive power balances at every bus via
//! the shared mismatch expression `S_inj - diag(V) conj(Y V)`. Inequalities
//! are squared series-current caps per branch and a linear power-factor cone
//! `|Q| <= tan(acos pf) * P` per generator; the box on the variables carries
//! the voltage band and the 85 % historical-maximum bounds. Active output is
//! kept nonnegative: the units aggregate downstream DER whose measured
//! output never reverses, and a nonnegative P keeps the power-factor cone
//! convex with bounded multipliers at the origin.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::network::{AdmittanceMatrix, Network};
use crate::powerflow::deriv;
use crate::powerflow::OperatingPoint;
use crate::rsae::SecurityLimits;
use crate::smfae::nlp::NlpProblem;
use crate::smfae::{RedispatchWeights, SlackPolicy};

/// Relaxation of the power-factor cone rows (pu). Opens a strict interior at
/// zero output, where the exact cone collapses to a point and multiplier
/// estimates degenerate; stays below the 1e-6 envelope verification
/// allowance with room for the solver feasibility tolerance.
pub(crate) const CONE_RELAX_PU: f64 = 5e-7;

/// One adjustable generator in the variable map.
#[derive(Debug, Clone)]
pub(crate) struct GenVar {
    pub id: u32,
    /// Admittance-matrix row of its bus.
    pub row: usize,
    pub p_idx: usize,
    pub q_idx: usize,
    /// Base schedule (pu), the objective center.
    pub p0_pu: f64,
    pub q0_pu: f64,
    /// Absolute active bound `0.85 * hist_max` (pu).
    pub p_abs_max_pu: f64,
}

/// Squared-current cap for one branch row.
#[derive(Debug, Clone)]
pub(crate) struct BranchCap {
    pub from: usize,
    pub to: usize,
    pub y2: f64,
    /// Squared cap on the series current (pu^2).
    pub cap2: f64,
}

pub(crate) struct CompiledNlp {
    pub n: usize,
    pub slack_row: usize,
    pub y: DMatrix<Complex64>,
    /// theta / vm variable index per matrix row, None at the slack.
    pub th: Vec<Option<usize>>,
    pub vm: Vec<Option<usize>>,
    pub gens: Vec<GenVar>,
    /// Generators frozen at zero by a zero historical maximum.
    pub frozen: Vec<u32>,
    pub q_ext_idx: usize,
    pub p_ext_idx: Option<usize>,
    /// Constant active injection at the slack row under a fixed policy (pu).
    pub p_ext_fixed_pu: f64,
    /// Fixed complex injection per row: loads (negative), nothing else (pu).
    pub s_fixed: Vec<Complex64>,
    pub branch_caps: Vec<BranchCap>,
    /// tan(acos pf) of the envelope.
    pub tau: f64,
    pub weights: RedispatchWeights,
    pub nx: usize,
    pub xmin: DVector<f64>,
    pub xmax: DVector<f64>,
    /// Slack-row voltage (pu), angle zero.
    pub v_slack: f64,
}

impl CompiledNlp {
    pub fn new(
        net: &Network,
        adm: &AdmittanceMatrix,
        point: &OperatingPoint,
        weights: &RedispatchWeights,
        limits: &SecurityLimits,
        envelope_pf: f64,
        slack: &SlackPolicy,
        hist_max_mw: &std::collections::BTreeMap<u32, f64>,
    ) -> CompiledNlp {
        let n = adm.n();
        let slack_row = adm.slack_row;
        let s_base = net.s_base_mva;
        let tau = (1.0 - envelope_pf * envelope_pf).sqrt() / envelope_pf;

        let mut th = vec![None; n];
        let mut vm = vec![None; n];
        let mut next = 0usize;
        for row in 0..n {
            if row != slack_row {
                th[row] = Some(next);
                next += 1;
            }
        }
        for row in 0..n {
            if row != slack_row {
                vm[row] = Some(next);
                next += 1;
            }
        }

        let mut gens = Vec::new();
        let mut frozen = Vec::new();
        for g in net.generators.iter().filter(|g| g.in_service) {
            let hist = hist_max_mw.get(&g.id).copied().unwrap_or(0.0);
            let row = adm.row_of[net.bus_idx(g.bus).expect("validated")].expect("in service");
            if hist > 0.0 {
                let base = point.generators.get(&g.id).copied().unwrap_or_default();
                gens.push(GenVar {
                    id: g.id,
                    row,
                    p_idx: next,
                    q_idx: next + 1,
                    p0_pu: base.p_mw / s_base,
                    q0_pu: base.q_mvar / s_base,
                    p_abs_max_pu: 0.85 * hist / s_base,
                });
                next += 2;
            } else {
                frozen.push(g.id);
            }
        }

        let q_ext_idx = next;
        next += 1;
        let p_ext_idx = match slack {
            SlackPolicy::Free => {
                let i = next;
                next += 1;
                Some(i)
            }
            SlackPolicy::FixedP { .. } => None,
        };
        let p_ext_fixed_pu = match slack {
            SlackPolicy::FixedP { p_ext_mw } => p_ext_mw / s_base,
            SlackPolicy::Free => 0.0,
        };
        let nx = next;

        let mut s_fixed = vec![Complex64::new(0.0, 0.0); n];
        for l in net.loads.iter().filter(|l| l.in_service) {
            if let Some(v) = point.loads.get(&l.id) {
                let row = adm.row_of[net.bus_idx(l.bus).expect("validated")].expect("in service");
                s_fixed[row] -= Complex64::new(v.p_mw, v.q_mvar) / s_base;
            }
        }

        let margin = limits.loading_max_percent / 100.0;
        let branch_caps = adm
            .branches
            .iter()
            .map(|ba| {
                // Transformer ratings are apparent power; converting at the
                // upper voltage bound keeps S <= margin * sn for any voltage
                // inside the band.
                let cap = if ba.is_transformer() {
                    margin * ba.i_max_pu / limits.v_max_pu
                } else {
                    margin * ba.i_max_pu
                };
                BranchCap {
                    from: ba.from,
                    to: ba.to,
                    y2: ba.y_series.norm_sqr(),
                    cap2: cap * cap,
                }
            })
            .collect();

        let mut xmin = DVector::from_element(nx, f64::NEG_INFINITY);
        let mut xmax = DVector::from_element(nx, f64::INFINITY);
        for row in 0..n {
            if let Some(i) = th[row] {
                xmin[i] = -std::f64::consts::PI;
                xmax[i] = std::f64::consts::PI;
            }
            if let Some(i) = vm[row] {
                xmin[i] = limits.v_min_pu;
                xmax[i] = limits.v_max_pu;
            }
        }
        // No explicit reactive box: the cone rows already bound q through
        // the active box, and a duplicate bound would make the active set
        // linearly dependent at full output.
        for g in &gens {
            xmin[g.p_idx] = 0.0;
            xmax[g.p_idx] = g.p_abs_max_pu;
        }

        CompiledNlp {
            n,
            slack_row,
            y: adm.y.clone(),
            th,
            vm,
            gens,
            frozen,
            q_ext_idx,
            p_ext_idx,
            p_ext_fixed_pu,
            s_fixed,
            branch_caps,
            tau,
            weights: *weights,
            nx,
            xmin,
            xmax,
            v_slack: net.ext_grid.vm_pu,
        }
    }

    /// Complex voltage per matrix row for a variable vector.
    pub fn voltages(&self, x: &DVector<f64>) -> Vec<Complex64> {
        (0..self.n)
            .map(|row| {
                if row == self.slack_row {
                    Complex64::new(self.v_slack, 0.0)
                } else {
                    Complex64::from_polar(x[self.vm[row].unwrap()], x[self.th[row].unwrap()])
                }
            })
            .collect()
    }

    /// Scheduled complex injection per matrix row for a variable vector.
    pub fn injections(&self, x: &DVector<f64>) -> Vec<Complex64> {
        let mut s = self.s_fixed.clone();
        for g in &self.gens {
            s[g.row] += Complex64::new(x[g.p_idx], x[g.q_idx]);
        }
        s[self.slack_row] += Complex64::new(
            self.p_ext_idx.map(|i| x[i]).unwrap_or(self.p_ext_fixed_pu),
            x[self.q_ext_idx],
        );
        s
    }

    fn ybus_currents(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.y[(i, j)] * v[j]).sum())
            .collect()
    }

    /// Number of nonlinear-plus-cone inequality rows.
    pub fn num_ineq(&self) -> usize {
        self.branch_caps.len() + 2 * self.gens.len()
    }
}

impl NlpProblem for CompiledNlp {
    fn num_vars(&self) -> usize {
        self.nx
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (self.xmin.clone(), self.xmax.clone())
    }

    fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut f = 0.0;
        let mut df = DVector::zeros(self.nx);
        for g in &self.gens {
            let dp = x[g.p_idx] - g.p0_pu;
            let dq = x[g.q_idx] - g.q0_pu;
            f += self.weights.w_p * dp * dp + self.weights.w_q * dq * dq;
            df[g.p_idx] = 2.0 * self.weights.w_p * dp;
            df[g.q_idx] = 2.0 * self.weights.w_q * dq;
        }
        (f, df)
    }

    fn equalities(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n;
        let v = self.voltages(x);
        let s_inj = self.injections(x);
        let ibus = self.ybus_currents(&v);

        let mut g = DVector::zeros(2 * n);
        for i in 0..n {
            let s_calc = v[i] * ibus[i].conj();
            let mis = s_inj[i] - s_calc;
            g[i] = mis.re;
            g[n + i] = mis.im;
        }

        let (ds_dva, ds_dvm) = deriv::ds_dv(&self.y, &v);
        let mut dg = DMatrix::zeros(2 * n, self.nx);
        for i in 0..n {
            for j in 0..n {
                if let Some(c) = self.th[j] {
                    dg[(i, c)] = -ds_dva[(i, j)].re;
                    dg[(n + i, c)] = -ds_dva[(i, j)].im;
                }
                if let Some(c) = self.vm[j] {
                    dg[(i, c)] = -ds_dvm[(i, j)].re;
                    dg[(n + i, c)] = -ds_dvm[(i, j)].im;
                }
            }
        }
        for gv in &self.gens {
            dg[(gv.row, gv.p_idx)] = 1.0;
            dg[(n + gv.row, gv.q_idx)] = 1.0;
        }
        dg[(n + self.slack_row, self.q_ext_idx)] = 1.0;
        if let Some(i) = self.p_ext_idx {
            dg[(self.slack_row, i)] = 1.0;
        }
        (g, dg)
    }

    fn inequalities(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let v = self.voltages(x);
        let nh = self.branch_caps.len() + 2 * self.gens.len();
        let mut h = DVector::zeros(nh);
        let mut dh = DMatrix::zeros(nh, self.nx);

        for (k, b) in self.branch_caps.iter().enumerate() {
            let (vi, vj) = (v[b.from].norm(), v[b.to].norm());
            let delta = v[b.from].arg() - v[b.to].arg();
            let (sin_d, cos_d) = delta.sin_cos();
            h[k] = b.y2 * (vi * vi + vj * vj - 2.0 * vi * vj * cos_d) - b.cap2;
            if let Some(c) = self.vm[b.from] {
                dh[(k, c)] = b.y2 * (2.0 * vi - 2.0 * vj * cos_d);
            }
            if let Some(c) = self.vm[b.to] {
                dh[(k, c)] = b.y2 * (2.0 * vj - 2.0 * vi * cos_d);
            }
            let dth = 2.0 * b.y2 * vi * vj * sin_d;
            if let Some(c) = self.th[b.from] {
                dh[(k, c)] = dth;
            }
            if let Some(c) = self.th[b.to] {
                dh[(k, c)] = -dth;
            }
        }

        let off = self.branch_caps.len();
        for (k, g) in self.gens.iter().enumerate() {
            let (p, q) = (x[g.p_idx], x[g.q_idx]);
            h[off + 2 * k] = q - self.tau * p - CONE_RELAX_PU;
            dh[(off + 2 * k, g.q_idx)] = 1.0;
            dh[(off + 2 * k, g.p_idx)] = -self.tau;
            h[off + 2 * k + 1] = -q - self.tau * p - CONE_RELAX_PU;
            dh[(off + 2 * k + 1, g.q_idx)] = -1.0;
            dh[(off + 2 * k + 1, g.p_idx)] = -self.tau;
        }
        (h, dh)
    }

    fn lagrangian_hessian(
        &self,
        x: &DVector<f64>,
        lam: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> DMatrix<f64> {
        let n = self.n;
        let mut hess = DMatrix::zeros(self.nx, self.nx);

        for g in &self.gens {
            hess[(g.p_idx, g.p_idx)] += 2.0 * self.weights.w_p;
            hess[(g.q_idx, g.q_idx)] += 2.0 * self.weights.w_q;
        }

        // Power-balance part: g = S_inj - S_calc(V), so the (theta, vm)
        // block is minus the Hessian of lamP' P_calc + lamQ' Q_calc, which
        // is the real part of the complex blocks at lam = lamP - j lamQ.
        let v = self.voltages(x);
        let lam_c: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(lam[i], -lam[n + i]))
            .collect();
        let (gaa, gav, gva, gvv) = deriv::d2s_dv2(&self.y, &v, &lam_c);
        for i in 0..n {
            for j in 0..n {
                if let (Some(r), Some(c)) = (self.th[i], self.th[j]) {
                    hess[(r, c)] -= gaa[(i, j)].re;
                }
                if let (Some(r), Some(c)) = (self.th[i], self.vm[j]) {
                    hess[(r, c)] -= gav[(i, j)].re;
                }
                if let (Some(r), Some(c)) = (self.vm[i], self.th[j]) {
                    hess[(r, c)] -= gva[(i, j)].re;
                }
                if let (Some(r), Some(c)) = (self.vm[i], self.vm[j]) {
                    hess[(r, c)] -= gvv[(i, j)].re;
                }
            }
        }

        for (k, b) in self.branch_caps.iter().enumerate() {
            let m = mu[k];
            if m == 0.0 {
                continue;
            }
            let (vi, vj) = (v[b.from].norm(), v[b.to].norm());
            let delta = v[b.from].arg() - v[b.to].arg();
            let (sin_d, cos_d) = delta.sin_cos();
            let y2 = b.y2;
            let add = |a: Option<usize>, bidx: Option<usize>, val: f64, hess: &mut DMatrix<f64>| {
                if let (Some(r), Some(c)) = (a, bidx) {
                    hess[(r, c)] += m * val;
                }
            };
            let (tf, tt) = (self.th[b.from], self.th[b.to]);
            let (mf, mt) = (self.vm[b.from], self.vm[b.to]);
            add(mf, mf, 2.0 * y2, &mut hess);
            add(mt, mt, 2.0 * y2, &mut hess);
            add(mf, mt, -2.0 * y2 * cos_d, &mut hess);
            add(mt, mf, -2.0 * y2 * cos_d, &mut hess);
            add(tf, tf, 2.0 * y2 * vi * vj * cos_d, &mut hess);
            add(tt, tt, 2.0 * y2 * vi * vj * cos_d, &mut hess);
            add(tf, tt, -2.0 * y2 * vi * vj * cos_d, &mut hess);
            add(tt, tf, -2.0 * y2 * vi * vj * cos_d, &mut hess);
            add(tf, mf, 2.0 * y2 * vj * sin_d, &mut hess);
            add(mf, tf, 2.0 * y2 * vj * sin_d, &mut hess);
            add(tf, mt, 2.0 * y2 * vi * sin_d, &mut hess);
            add(mt, tf, 2.0 * y2 * vi * sin_d, &mut hess);
            add(tt, mf, -2.0 * y2 * vj * sin_d, &mut hess);
            add(mf, tt, -2.0 * y2 * vj * sin_d, &mut hess);
            add(tt, mt, -2.0 * y2 * vi * sin_d, &mut hess);
            add(mt, tt, -2.0 * y2 * vi * sin_d, &mut hess);
        }

        hess
    }
}

/// Elastic relaxation used to classify failed solves: minimize the squared
/// slack needed to satisfy all constraints, keeping the box bounds hard.
pub(crate) struct ElasticNlp<'a> {
    pub base: &'a CompiledNlp,
    pub neq: usize,
    pub nh: usize,
}

impl<'a> ElasticNlp<'a> {
    pub fn new(base: &'a CompiledNlp) -> Self {
        ElasticNlp {
            neq: 2 * base.n,
            nh: base.num_ineq(),
            base,
        }
    }

    pub fn nx(&self) -> usize {
        self.base.nx + 2 * self.neq + self.nh
    }

    fn split<'b>(&self, x: &'b DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.base.nx, |i, _| x[i])
    }

    /// Starting point: base variables plus slacks sized from the residuals.
    pub fn start(&self, x_base: &DVector<f64>) -> DVector<f64> {
        let (g, _) = self.base.equalities(x_base);
        let (h, _) = self.base.inequalities(x_base);
        let mut x = DVector::zeros(self.nx());
        for i in 0..self.base.nx {
            x[i] = x_base[i];
        }
        for r in 0..self.neq {
            x[self.base.nx + r] = (-g[r]).max(0.0) + 1e-3;
            x[self.base.nx + self.neq + r] = g[r].max(0.0) + 1e-3;
        }
        for k in 0..self.nh {
            x[self.base.nx + 2 * self.neq + k] = h[k].max(0.0) + 1e-3;
        }
        x
    }
}

impl NlpProblem for ElasticNlp<'_> {
    fn num_vars(&self) -> usize {
        self.nx()
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let (bmin, bmax) = self.base.bounds();
        let mut xmin = DVector::from_element(self.nx(), 0.0);
        let mut xmax = DVector::from_element(self.nx(), f64::INFINITY);
        for i in 0..self.base.nx {
            xmin[i] = bmin[i];
            xmax[i] = bmax[i];
        }
        (xmin, xmax)
    }

    fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut f = 0.0;
        let mut df = DVector::zeros(self.nx());
        for i in self.base.nx..self.nx() {
            f += 0.5 * x[i] * x[i];
            df[i] = x[i];
        }
        (f, df)
    }

    fn equalities(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let xb = self.split(x);
        let (g, dg) = self.base.equalities(&xb);
        let mut ge = DVector::zeros(self.neq);
        let mut dge = DMatrix::zeros(self.neq, self.nx());
        for r in 0..self.neq {
            ge[r] = g[r] + x[self.base.nx + r] - x[self.base.nx + self.neq + r];
            for c in 0..self.base.nx {
                dge[(r, c)] = dg[(r, c)];
            }
            dge[(r, self.base.nx + r)] = 1.0;
            dge[(r, self.base.nx + self.neq + r)] = -1.0;
        }
        (ge, dge)
    }

    fn inequalities(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let xb = self.split(x);
        let (h, dh) = self.base.inequalities(&xb);
        let mut he = DVector::zeros(self.nh);
        let mut dhe = DMatrix::zeros(self.nh, self.nx());
        for k in 0..self.nh {
            he[k] = h[k] - x[self.base.nx + 2 * self.neq + k];
            for c in 0..self.base.nx {
                dhe[(k, c)] = dh[(k, c)];
            }
            dhe[(k, self.base.nx + 2 * self.neq + k)] = -1.0;
        }
        (he, dhe)
    }

    fn lagrangian_hessian(
        &self,
        x: &DVector<f64>,
        lam: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> DMatrix<f64> {
        let xb = self.split(x);
        // The base objective does not appear here, so subtract its Hessian
        // contribution: evaluate the base Lagrangian Hessian and remove the
        // quadratic objective blocks it added.
        let mut base_h = self.base.lagrangian_hessian(&xb, lam, mu);
        for g in &self.base.gens {
            base_h[(g.p_idx, g.p_idx)] -= 2.0 * self.base.weights.w_p;
            base_h[(g.q_idx, g.q_idx)] -= 2.0 * self.base.weights.w_q;
        }
        let mut hess = DMatrix::zeros(self.nx(), self.nx());
        for r in 0..self.base.nx {
            for c in 0..self.base.nx {
                hess[(r, c)] = base_h[(r, c)];
            }
        }
        for i in self.base.nx..self.nx() {
            hess[(i, i)] = 1.0;
        }
        hess
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{
        build_admittance, Bus, BusKind, ExternalGrid, Generator, Line, Load, Network,
        NetworkParts, Shunt, Transformer,
    };
    use crate::powerflow::PqMw;
    use chrono::{TimeZone, Utc};

    fn toy() -> (Network, OperatingPoint) {
        let parts = NetworkParts {
            buses: vec![
                Bus { id: 0, name: "G".into(), vn_kv: 60.0, kind: BusKind::Slack, in_service: true },
                Bus { id: 1, name: "M".into(), vn_kv: 60.0, kind: BusKind::Pq, in_service: true },
                Bus { id: 2, name: "S1".into(), vn_kv: 10.0, kind: BusKind::Pq, in_service: true },
                Bus { id: 3, name: "S2".into(), vn_kv: 10.0, kind: BusKind::Pq, in_service: true },
            ],
            lines: vec![
                Line {
                    id: 0,
                    from_bus: 0,
                    to_bus: 1,
                    length_km: 5.0,
                    r_ohm_per_km: 0.12,
                    x_ohm_per_km: 0.39,
                    c_nf_per_km: 9.5,
                    max_i_ka: 0.4,
                    in_service: true,
                },
                Line {
                    id: 1,
                    from_bus: 2,
                    to_bus: 3,
                    length_km: 1.2,
                    r_ohm_per_km: 0.3,
                    x_ohm_per_km: 0.12,
                    c_nf_per_km: 150.0,
                    max_i_ka: 0.3,
                    in_service: true,
                },
            ],
            transformers: vec![Transformer {
                id: 0,
                hv_bus: 1,
                lv_bus: 2,
                sn_mva: 16.0,
                vk_percent: 8.0,
                vkr_percent: 0.5,
                vn_hv_kv: 60.0,
                vn_lv_kv: 10.0,
                in_service: true,
            }],
            shunts: vec![Shunt { id: 0, bus: 3, q_mvar: 0.5, p_mw: 0.05, in_service: true }],
            generators: vec![
                Generator { id: 0, bus: 3, p_hist_max_mw: 6.0, in_service: true },
                Generator { id: 1, bus: 2, p_hist_max_mw: 4.0, in_service: true },
            ],
            loads: vec![
                Load { id: 0, bus: 3, in_service: true },
                Load { id: 1, bus: 1, in_service: true },
            ],
        };
        let net = Network::from_parts(parts, ExternalGrid { bus: 0, vm_pu: 1.02 }, 10.0, 50.0)
            .expect("valid toy network");
        let mut point = OperatingPoint::new(Utc.with_ymd_and_hms(2023, 6, 1, 12, 0, 0).unwrap());
        point.generators.insert(0, PqMw::new(2.0, 0.3));
        point.generators.insert(1, PqMw::new(1.0, -0.2));
        point.loads.insert(0, PqMw::new(3.0, 0.9));
        point.loads.insert(1, PqMw::new(1.5, 0.3));
        (net, point)
    }

    fn compiled(slack: SlackPolicy) -> CompiledNlp {
        let (net, point) = toy();
        let adm = build_admittance(&net).unwrap();
        let mut hist = std::collections::BTreeMap::new();
        hist.insert(0, 6.0);
        hist.insert(1, 4.0);
        CompiledNlp::new(
            &net,
            &adm,
            &point,
            &RedispatchWeights { w_p: 1.0, w_q: 0.25 },
            &SecurityLimits::default(),
            0.95,
            &slack,
            &hist,
        )
    }

    /// Deterministic strictly interior point with all entries distinct.
    fn interior(c: &CompiledNlp) -> DVector<f64> {
        DVector::from_fn(c.nx, |i, _| {
            let lo = c.xmin[i];
            let hi = c.xmax[i];
            let wobble = (3.7 * i as f64 + 0.4).sin();
            if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi) + 0.3 * 0.5 * (hi - lo) * wobble
            } else {
                0.15 * wobble
            }
        })
    }

    fn label(c: &CompiledNlp, i: usize) -> String {
        for row in 0..c.n {
            if c.th[row] == Some(i) {
                return format!("th[{row}]");
            }
            if c.vm[row] == Some(i) {
                return format!("vm[{row}]");
            }
        }
        for g in &c.gens {
            if g.p_idx == i {
                return format!("p[gen {}]", g.id);
            }
            if g.q_idx == i {
                return format!("q[gen {}]", g.id);
            }
        }
        if i == c.q_ext_idx {
            return "q_ext".into();
        }
        if c.p_ext_idx == Some(i) {
            return "p_ext".into();
        }
        format!("x[{i}]")
    }

    #[test]
    fn equality_jacobian_matches_finite_differences() {
        let c = compiled(SlackPolicy::Free);
        let x = interior(&c);
        let (_, dg) = c.equalities(&x);
        let step = 1e-6;
        for col in 0..c.nx {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[col] += step;
            xm[col] -= step;
            let (gp, _) = c.equalities(&xp);
            let (gm, _) = c.equalities(&xm);
            for row in 0..2 * c.n {
                let fd = (gp[row] - gm[row]) / (2.0 * step);
                let got = dg[(row, col)];
                assert!(
                    (fd - got).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "dg({row}, {}) analytic {got} vs fd {fd}",
                    label(&c, col)
                );
            }
        }
    }

    #[test]
    fn inequality_jacobian_matches_finite_differences() {
        let c = compiled(SlackPolicy::Free);
        let x = interior(&c);
        let (_, dh) = c.inequalities(&x);
        let nh = c.num_ineq();
        let step = 1e-6;
        for col in 0..c.nx {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[col] += step;
            xm[col] -= step;
            let (hp, _) = c.inequalities(&xp);
            let (hm, _) = c.inequalities(&xm);
            for row in 0..nh {
                let fd = (hp[row] - hm[row]) / (2.0 * step);
                let got = dh[(row, col)];
                assert!(
                    (fd - got).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "dh({row}, {}) analytic {got} vs fd {fd}",
                    label(&c, col)
                );
            }
        }
    }

    fn lagrangian_gradient(
        c: &CompiledNlp,
        x: &DVector<f64>,
        lam: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> DVector<f64> {
        let (_, mut grad) = c.objective(x);
        let (_, dg) = c.equalities(x);
        let (_, dh) = c.inequalities(x);
        grad.gemv_tr(1.0, &dg, lam, 1.0);
        grad.gemv_tr(1.0, &dh, mu, 1.0);
        grad
    }

    #[test]
    fn lagrangian_hessian_matches_finite_differences() {
        for slack in [SlackPolicy::Free, SlackPolicy::FixedP { p_ext_mw: 2.5 }] {
            let c = compiled(slack);
            let x = interior(&c);
            let lam = DVector::from_fn(2 * c.n, |r, _| 0.3 + 0.25 * (2.1 * r as f64).sin());
            let mu = DVector::from_fn(c.num_ineq(), |k, _| 0.2 + 0.15 * (1.3 * k as f64).sin().abs());
            let hess = c.lagrangian_hessian(&x, &lam, &mu);
            let step = 1e-5;
            for col in 0..c.nx {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[col] += step;
                xm[col] -= step;
                let gp = lagrangian_gradient(&c, &xp, &lam, &mu);
                let gm = lagrangian_gradient(&c, &xm, &lam, &mu);
                for row in 0..c.nx {
                    let fd = (gp[row] - gm[row]) / (2.0 * step);
                    let got = hess[(row, col)];
                    assert!(
                        (fd - got).abs() <= 1e-4 * (1.0 + fd.abs()),
                        "hessian({}, {}) analytic {got} vs fd {fd}",
                        label(&c, row),
                        label(&c, col)
                    );
                }
            }
        }
    }
}
