//! Independent reference implementations used by the test suites.
//!
//! Everything here is deliberately written from first principles, without
//! touching the library's matrix assembly or solver internals, so the main
//! code paths can be checked against genuinely separate arithmetic: a naive
//! admittance accumulation, a Gauss-Seidel power-flow solver, a random small
//! network generator, finite-difference derivative helpers and a brute-force
//! grid search for the redispatch problem.

use chrono::{TimeZone, Utc};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gridtwin::network::{
    Bus, BusId, BusKind, ExternalGrid, Generator, Line, Load, Network, NetworkParts, Shunt,
    Transformer,
};
use gridtwin::powerflow::{solve_power_flow, OperatingPoint, PqMw, SolverOptions};
use gridtwin::rsae::assess;
use gridtwin::smfae::RedispatchConfig;

/// Row order used by all testkit matrices: in-service buses ascending by id.
pub fn oracle_rows(net: &Network) -> Vec<BusId> {
    net.buses
        .iter()
        .filter(|b| b.in_service)
        .map(|b| b.id)
        .collect()
}

/// Bus admittance matrix accumulated element by element, independent of the
/// library's assembly.
pub fn naive_admittance(net: &Network) -> DMatrix<Complex64> {
    let rows = oracle_rows(net);
    let idx = |bus: BusId| rows.iter().position(|&b| b == bus).expect("in-service bus");
    let n = rows.len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));

    let vn_of = |bus: BusId| {
        net.buses
            .iter()
            .find(|b| b.id == bus)
            .expect("bus exists")
            .vn_kv
    };

    for line in net.lines.iter().filter(|l| l.in_service) {
        let vn = vn_of(line.from_bus);
        let z_base = vn * vn / net.s_base_mva;
        let z = Complex64::new(
            line.r_ohm_per_km * line.length_km / z_base,
            line.x_ohm_per_km * line.length_km / z_base,
        );
        let ys = 1.0 / z;
        let b_total = 2.0 * std::f64::consts::PI
            * net.f_hz
            * line.c_nf_per_km
            * 1e-9
            * line.length_km
            * z_base;
        let ysh = Complex64::new(0.0, b_total / 2.0);
        let (i, j) = (idx(line.from_bus), idx(line.to_bus));
        y[(i, i)] += ys + ysh;
        y[(j, j)] += ys + ysh;
        y[(i, j)] -= ys;
        y[(j, i)] -= ys;
    }
    for t in net.transformers.iter().filter(|t| t.in_service) {
        let vk = t.vk_percent / 100.0;
        let vkr = t.vkr_percent / 100.0;
        let vkx = (vk * vk - vkr * vkr).sqrt();
        let z = Complex64::new(vkr, vkx) * (net.s_base_mva / t.sn_mva);
        let ys = 1.0 / z;
        let (i, j) = (idx(t.hv_bus), idx(t.lv_bus));
        y[(i, i)] += ys;
        y[(j, j)] += ys;
        y[(i, j)] -= ys;
        y[(j, i)] -= ys;
    }
    for s in net.shunts.iter().filter(|s| s.in_service) {
        let i = idx(s.bus);
        y[(i, i)] += Complex64::new(s.p_mw, -s.q_mvar) / net.s_base_mva;
    }
    y
}

/// Net complex injection per row in pu, summed directly from the operating
/// point.
pub fn oracle_injections(net: &Network, point: &OperatingPoint) -> Vec<Complex64> {
    let rows = oracle_rows(net);
    let mut s = vec![Complex64::new(0.0, 0.0); rows.len()];
    let idx = |bus: BusId| rows.iter().position(|&b| b == bus).expect("in-service bus");
    for g in net.generators.iter().filter(|g| g.in_service) {
        if let Some(pq) = point.generators.get(&g.id) {
            s[idx(g.bus)] += Complex64::new(pq.p_mw, pq.q_mvar) / net.s_base_mva;
        }
    }
    for l in net.loads.iter().filter(|l| l.in_service) {
        if let Some(pq) = point.loads.get(&l.id) {
            s[idx(l.bus)] -= Complex64::new(pq.p_mw, pq.q_mvar) / net.s_base_mva;
        }
    }
    s
}

/// Gauss-Seidel reference power flow on the naive admittance matrix.
///
/// Returns voltages in `oracle_rows` order, or an error message when the
/// iteration fails to bring the power mismatch under `tol_pu`.
pub fn gauss_seidel(
    net: &Network,
    point: &OperatingPoint,
    tol_pu: f64,
    max_iter: usize,
) -> Result<Vec<Complex64>, String> {
    let rows = oracle_rows(net);
    let y = naive_admittance(net);
    let s = oracle_injections(net, point);
    let slack = rows
        .iter()
        .position(|&b| b == net.ext_grid.bus)
        .expect("slack is in service");
    let n = rows.len();

    let mut v = vec![Complex64::new(1.0, 0.0); n];
    v[slack] = Complex64::new(net.ext_grid.vm_pu, 0.0);

    for _ in 0..max_iter {
        for i in 0..n {
            if i == slack {
                continue;
            }
            let mut sum = Complex64::new(0.0, 0.0);
            for j in 0..n {
                if j != i {
                    sum += y[(i, j)] * v[j];
                }
            }
            v[i] = ((s[i] / v[i]).conj() - sum) / y[(i, i)];
        }
        let mut worst = 0.0_f64;
        for i in 0..n {
            if i == slack {
                continue;
            }
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                acc += y[(i, j)] * v[j];
            }
            let mismatch = s[i] - v[i] * acc.conj();
            worst = worst.max(mismatch.norm());
        }
        if worst < tol_pu {
            return Ok(v);
        }
    }
    Err(format!("gauss-seidel did not reach {tol_pu} in {max_iter} iterations"))
}

/// A random small network and a matching operating point.
///
/// Topology is a random tree over 2..=6 buses rooted at the slack, with
/// occasional transformer branches to a 10 kV level, chord lines between
/// same-voltage buses, light loads and generation, and sometimes a shunt.
/// Injections are kept modest so both solvers converge.
pub fn random_case(seed: u64) -> (Network, OperatingPoint) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_buses = rng.gen_range(2..=6usize);

    let mut buses = vec![Bus {
        id: 0,
        name: "B0".into(),
        vn_kv: 60.0,
        kind: BusKind::Slack,
        in_service: true,
    }];
    let mut lines = Vec::new();
    let mut transformers = Vec::new();
    let mut next_line = 1u32;
    let mut next_trafo = 1u32;

    for i in 1..n_buses {
        let parent = rng.gen_range(0..i);
        let parent_vn = buses[parent].vn_kv;
        let make_trafo = parent_vn == 60.0 && rng.gen_bool(0.25);
        let vn = if make_trafo { 10.0 } else { parent_vn };
        buses.push(Bus {
            id: i as u32,
            name: format!("B{i}"),
            vn_kv: vn,
            kind: BusKind::Pq,
            in_service: true,
        });
        if make_trafo {
            transformers.push(Transformer {
                id: next_trafo,
                hv_bus: parent as u32,
                lv_bus: i as u32,
                sn_mva: rng.gen_range(5.0..20.0),
                vk_percent: rng.gen_range(8.0..14.0),
                vkr_percent: rng.gen_range(0.3..1.0),
                vn_hv_kv: 60.0,
                vn_lv_kv: 10.0,
                in_service: true,
            });
            next_trafo += 1;
        } else {
            let length = if vn == 60.0 {
                rng.gen_range(1.0..8.0)
            } else {
                rng.gen_range(0.2..1.5)
            };
            lines.push(Line {
                id: next_line,
                from_bus: parent as u32,
                to_bus: i as u32,
                length_km: length,
                r_ohm_per_km: rng.gen_range(0.05..0.4),
                x_ohm_per_km: rng.gen_range(0.1..0.45),
                c_nf_per_km: rng.gen_range(0.0..250.0),
                max_i_ka: rng.gen_range(0.3..0.8),
                in_service: true,
            });
            next_line += 1;
        }
    }
    for a in 0..n_buses {
        for b in (a + 1)..n_buses {
            if buses[a].vn_kv != buses[b].vn_kv || !rng.gen_bool(0.15) {
                continue;
            }
            let vn = buses[a].vn_kv;
            let length = if vn == 60.0 { rng.gen_range(1.0..8.0) } else { rng.gen_range(0.2..1.5) };
            lines.push(Line {
                id: next_line,
                from_bus: a as u32,
                to_bus: b as u32,
                length_km: length,
                r_ohm_per_km: rng.gen_range(0.05..0.4),
                x_ohm_per_km: rng.gen_range(0.1..0.45),
                c_nf_per_km: rng.gen_range(0.0..250.0),
                max_i_ka: rng.gen_range(0.3..0.8),
                in_service: true,
            });
            next_line += 1;
        }
    }

    let mut shunts = Vec::new();
    if n_buses > 2 && rng.gen_bool(0.2) {
        shunts.push(Shunt {
            id: 1,
            bus: rng.gen_range(1..n_buses) as u32,
            q_mvar: rng.gen_range(-3.0..3.0),
            p_mw: 0.0,
            in_service: true,
        });
    }

    let timestamp = Utc.with_ymd_and_hms(2023, 6, 1, 12, 0, 0).unwrap();
    let mut point = OperatingPoint::new(timestamp);
    let mut generators = Vec::new();
    let mut loads = Vec::new();
    let mut next_gen = 1u32;
    let mut next_load = 1u32;
    for i in 1..n_buses {
        if rng.gen_bool(0.7) {
            let p = rng.gen_range(0.0..4.0);
            let q = p * rng.gen_range(0.2..0.4);
            loads.push(Load { id: next_load, bus: i as u32, in_service: true });
            point.loads.insert(next_load, PqMw::new(p, q));
            next_load += 1;
        }
        if rng.gen_bool(0.5) {
            let p = rng.gen_range(0.0..3.0);
            let q = p * rng.gen_range(-0.2..0.2);
            generators.push(Generator {
                id: next_gen,
                bus: i as u32,
                p_hist_max_mw: p,
                in_service: true,
            });
            point.generators.insert(next_gen, PqMw::new(p, q));
            next_gen += 1;
        }
    }

    let net = Network::from_parts(
        NetworkParts { buses, lines, transformers, shunts, generators, loads },
        ExternalGrid { bus: 0, vm_pu: rng.gen_range(0.98..1.04) },
        100.0,
        50.0,
    )
    .expect("random case must validate");
    (net, point)
}

/// Central-difference Jacobian of a vector function.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = f(x).len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let fp = f(&xp);
        let fm = f(&xm);
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = x.len();
    let mut g = DVector::zeros(n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        g[j] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

/// Result of the brute-force redispatch search.
#[derive(Debug, Clone, Copy)]
pub struct BruteOptimum {
    /// Best objective found (same units as the solver: MW^2 weighted).
    pub objective: f64,
    pub p_mw: f64,
    pub q_mvar: f64,
    /// Number of grid candidates that satisfied every constraint.
    pub feasible_candidates: usize,
}

/// Exhaustive grid search over the setpoints of a single adjustable
/// generator under a free slack, checking feasibility through an actual
/// power flow plus the limit assessment and the power-factor envelope.
///
/// Panics when the instance has more than one adjustable generator; the
/// search is meant for small engineered cases.
pub fn brute_force_redispatch(
    net: &Network,
    point: &OperatingPoint,
    config: &RedispatchConfig,
    grid_pu: f64,
) -> Option<BruteOptimum> {
    let adjustable: Vec<&Generator> = net
        .generators
        .iter()
        .filter(|g| g.in_service)
        .filter(|g| config.hist_max_mw.get(&g.id).copied().unwrap_or(0.0) > 0.0)
        .collect();
    assert_eq!(
        adjustable.len(),
        1,
        "brute-force search handles exactly one adjustable generator"
    );
    let gen = adjustable[0];
    let s_base = net.s_base_mva;
    let hist_pu = config.hist_max_mw[&gen.id] / s_base;
    let p_cap = 0.85 * hist_pu;
    let tau = {
        let pf = config.envelope_pf;
        (1.0 - pf * pf).sqrt() / pf
    };
    let q_cap = tau * p_cap;

    let base = point.generators.get(&gen.id).copied().unwrap_or_default();
    let opts = SolverOptions::default();

    let steps = |lo: f64, hi: f64| -> Vec<f64> {
        let first = (lo / grid_pu).ceil() as i64;
        let last = (hi / grid_pu).floor() as i64;
        (first..=last).map(|i| i as f64 * grid_pu).collect()
    };

    let mut best: Option<BruteOptimum> = None;
    let mut feasible = 0usize;
    for &p in &steps(0.0, p_cap) {
        let q_env = tau * p;
        for &q in &steps(-q_cap, q_cap) {
            if q.abs() > q_env {
                continue;
            }
            let mut candidate = point.clone();
            candidate
                .generators
                .insert(gen.id, PqMw::new(p * s_base, q * s_base));
            let Ok(solution) = solve_power_flow(net, &candidate, &opts) else {
                continue;
            };
            let report = assess(
                &solution,
                &config.limits,
                gridtwin::rsae::AssessmentContext::Normal,
            )
            .expect("valid limits");
            if !report.is_secure() {
                continue;
            }
            feasible += 1;
            let dp = p * s_base - base.p_mw;
            let dq = q * s_base - base.q_mvar;
            let objective = config.weights.w_p * dp * dp + config.weights.w_q * dq * dq;
            if best.map(|b| objective < b.objective).unwrap_or(true) {
                best = Some(BruteOptimum {
                    objective,
                    p_mw: p * s_base,
                    q_mvar: q * s_base,
                    feasible_candidates: 0,
                });
            }
        }
    }
    best.map(|mut b| {
        b.feasible_candidates = feasible;
        b
    })
}

/// Operating point whose generator and load tables cover a network with
/// uniform per-unit-scaled values; handy for quick solver checks.
pub fn flat_point(net: &Network) -> OperatingPoint {
    let mut point = OperatingPoint::new(Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap());
    for g in net.generators.iter().filter(|g| g.in_service) {
        point.generators.insert(g.id, PqMw::new(0.0, 0.0));
    }
    for l in net.loads.iter().filter(|l| l.in_service) {
        point.loads.insert(l.id, PqMw::new(0.0, 0.0));
    }
    point
}
