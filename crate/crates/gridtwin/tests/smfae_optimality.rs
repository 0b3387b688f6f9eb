//! Redispatch optimality and constraint-satisfaction checks against the
//! brute-force grid-search reference on small engineered instances.

use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use gridtwin::network::{
    build_admittance, Bus, BusKind, ExternalGrid, Generator, Line, Load, Network, NetworkParts,
    Transformer,
};
use gridtwin::powerflow::{power_mismatch, solve_power_flow, OperatingPoint, PqMw, SolverOptions};
use gridtwin::rsae::{assess, AssessmentContext, ViolationKind};
use gridtwin::smfae::{
    build_problem, solve, solve_and_verify, ActivationMode, RedispatchConfig, ScheduleStatus,
    SetpointSchedule, SlackPolicy,
};
use gridtwin::Error;
use gridtwin_testkit::brute_force_redispatch;
use num_complex::Complex64;

/// Slack, one 60 kV feeder bus, one 10 kV collector behind a transformer.
/// The single generator aggregates a large wind park; at full output the
/// collector bus rises above the voltage band, so redispatch must curtail.
fn three_bus_network(hist_max_mw: f64) -> Network {
    let buses = vec![
        Bus { id: 0, name: "EXT".into(), vn_kv: 60.0, kind: BusKind::Slack, in_service: true },
        Bus { id: 1, name: "MV".into(), vn_kv: 60.0, kind: BusKind::Pq, in_service: true },
        Bus { id: 2, name: "PARK".into(), vn_kv: 10.0, kind: BusKind::Pq, in_service: true },
    ];
    let lines = vec![Line {
        id: 1,
        from_bus: 0,
        to_bus: 1,
        length_km: 30.0,
        r_ohm_per_km: 0.125,
        x_ohm_per_km: 0.305,
        c_nf_per_km: 9.6,
        max_i_ka: 0.5,
        in_service: true,
    }];
    let transformers = vec![Transformer {
        id: 1,
        hv_bus: 1,
        lv_bus: 2,
        sn_mva: 32.0,
        vk_percent: 12.0,
        vkr_percent: 0.5,
        vn_hv_kv: 60.0,
        vn_lv_kv: 10.0,
        in_service: true,
    }];
    let generators = vec![Generator { id: 1, bus: 2, p_hist_max_mw: hist_max_mw, in_service: true }];
    let loads = vec![Load { id: 1, bus: 2, in_service: true }];
    Network::from_parts(
        NetworkParts { buses, lines, transformers, shunts: Vec::new(), generators, loads },
        ExternalGrid { bus: 0, vm_pu: 1.02 },
        100.0,
        50.0,
    )
    .expect("three-bus network validates")
}

const HIST_MAX_MW: f64 = 30.0;

fn base_point() -> OperatingPoint {
    let mut point = OperatingPoint::new(Utc.with_ymd_and_hms(2023, 7, 14, 11, 30, 0).unwrap());
    point.generators.insert(1, PqMw::new(25.0, 6.0));
    point.loads.insert(1, PqMw::new(1.5, 0.4));
    point
}

fn config(slack: SlackPolicy) -> RedispatchConfig {
    let mut hist = BTreeMap::new();
    hist.insert(1u32, HIST_MAX_MW);
    RedispatchConfig::new(slack, hist)
}

fn cone_tau(pf: f64) -> f64 {
    (1.0 - pf * pf).sqrt() / pf
}

/// Structural properties every optimal schedule must satisfy, checked without
/// trusting any solver state: setpoint box and power-factor cone feasibility,
/// the reported objective matching its definition, and complex power balance
/// of the returned voltage profile against the admittance matrix, with the
/// slack-row residual covered by the reported import.
fn assert_schedule_invariants(
    net: &Network,
    point: &OperatingPoint,
    cfg: &RedispatchConfig,
    schedule: &SetpointSchedule,
) {
    assert_eq!(schedule.status, ScheduleStatus::Optimal);
    let s_base = net.s_base_mva;
    let tau = cone_tau(cfg.envelope_pf);
    let mut objective = 0.0;
    for (id, sp) in &schedule.setpoints {
        let cap = 0.85 * cfg.hist_max_mw[id];
        assert!(
            sp.p_mw >= -1e-9 && sp.p_mw <= cap + 1e-9,
            "gen {id}: p {} MW outside [0, {cap}]",
            sp.p_mw
        );
        let cone_gap_pu = sp.q_mvar.abs() / s_base - tau * sp.p_mw / s_base;
        assert!(
            cone_gap_pu <= 2e-6,
            "gen {id}: q {} MVAr outside the cone by {cone_gap_pu:.3e} pu",
            sp.q_mvar
        );
        objective +=
            cfg.weights.w_p * sp.delta_p_mw.powi(2) + cfg.weights.w_q * sp.delta_q_mvar.powi(2);
    }
    let denom = objective.abs().max(1.0);
    assert!(
        (objective - schedule.objective).abs() / denom <= 1e-9,
        "objective {} does not match its definition {}",
        schedule.objective,
        objective
    );

    let adm = build_admittance(net).expect("admittance");
    let applied = schedule.applied_to(point);
    let s_inj = applied.bus_injections_pu(net, &adm);
    let v: Vec<Complex64> = adm
        .rows
        .iter()
        .map(|&bi| {
            let bus = net.buses[bi].id;
            let bv = schedule
                .voltages
                .iter()
                .find(|x| x.bus == bus)
                .expect("schedule reports a voltage for every bus");
            Complex64::from_polar(bv.vm_pu, bv.va_rad)
        })
        .collect();
    let mismatch = power_mismatch(&adm, &v, &s_inj);
    let s_ext = Complex64::new(schedule.p_ext_mw, schedule.q_ext_mvar) / s_base;
    for (row, m) in mismatch.iter().enumerate() {
        let residual = if row == adm.slack_row { m + s_ext } else { *m };
        assert!(
            residual.norm() <= 1e-6,
            "row {row}: power balance residual {:.3e} pu",
            residual.norm()
        );
    }
}

/// The overvoltage case is genuinely violated before redispatch, and the
/// continuous optimum must not lose to the 0.01 pu grid search by more than
/// one grid cell in each coordinate.
#[test]
fn curtailment_matches_brute_force_within_grid_bound() {
    let net = three_bus_network(HIST_MAX_MW);
    let point = base_point();
    let cfg = config(SlackPolicy::Free);

    let sol = solve_power_flow(&net, &point, &SolverOptions::default()).unwrap();
    let report = assess(&sol, &cfg.limits, AssessmentContext::Normal).unwrap();
    assert!(
        report.violations.iter().any(|v| v.kind == ViolationKind::Overvoltage),
        "engineered point must start with an overvoltage"
    );

    let grid_pu = 0.01;
    let brute = brute_force_redispatch(&net, &point, &cfg, grid_pu).unwrap();
    assert!((brute.objective - 16.0).abs() < 1e-9, "grid optimum moved: {}", brute.objective);
    assert!(brute.feasible_candidates > 100);

    let problem = build_problem(&net, &point, ActivationMode::Corrective, &cfg).unwrap();
    let schedule = solve_and_verify(&problem).unwrap();
    assert_schedule_invariants(&net, &point, &cfg, &schedule);

    // Continuum dominates every grid-feasible candidate.
    assert!(
        schedule.objective <= brute.objective + 1e-6,
        "solver {} worse than grid search {}",
        schedule.objective,
        brute.objective
    );
    // And the grid point is at most one cell away from a continuum optimum.
    let step_mw = grid_pu * net.s_base_mva;
    let sp = schedule.setpoints[&1];
    let cell_bound = cfg.weights.w_p * (2.0 * sp.delta_p_mw.abs() * step_mw + step_mw * step_mw)
        + cfg.weights.w_q * (2.0 * sp.delta_q_mvar.abs() * step_mw + step_mw * step_mw);
    assert!(
        brute.objective - schedule.objective <= 2.0 * cell_bound,
        "gap {} exceeds the grid resolution bound {}",
        brute.objective - schedule.objective,
        2.0 * cell_bound
    );
    // The cure is a real intervention, not noise.
    assert!(schedule.objective > 1.0);

    let v = schedule.verification.as_ref().expect("verification record");
    assert_eq!(v.violations, 0);
    assert!(v.max_voltage_gap_pu <= 1e-6);
}

/// Import pinned at the lighter base level: the load increase must be covered
/// by raising local generation, restoring the voltage band without touching
/// the exchange with the upstream grid.
#[test]
fn pinned_import_covers_load_growth_locally() {
    let net = three_bus_network(HIST_MAX_MW);
    let mut light = OperatingPoint::new(Utc.with_ymd_and_hms(2023, 7, 14, 11, 30, 0).unwrap());
    light.generators.insert(1, PqMw::new(6.0, 1.0));
    light.loads.insert(1, PqMw::new(22.5, 7.1));
    let base_sol = solve_power_flow(&net, &light, &SolverOptions::default()).unwrap();
    let cfg_free = config(SlackPolicy::Free);
    assert!(
        assess(&base_sol, &cfg_free.limits, AssessmentContext::Normal)
            .unwrap()
            .violations
            .is_empty(),
        "base state must be secure"
    );

    let grown = light.with_scaled_loads(1.2);
    let sol = solve_power_flow(&net, &grown, &SolverOptions::default()).unwrap();
    let report = assess(&sol, &cfg_free.limits, AssessmentContext::Normal).unwrap();
    assert!(
        report.violations.iter().any(|v| v.kind == ViolationKind::Undervoltage),
        "grown load must cause an undervoltage"
    );

    let cfg = config(SlackPolicy::FixedP { p_ext_mw: base_sol.p_ext_mw });
    let problem = build_problem(&net, &grown, ActivationMode::Corrective, &cfg).unwrap();
    let schedule = solve_and_verify(&problem).unwrap();
    assert_schedule_invariants(&net, &grown, &cfg, &schedule);

    let sp = schedule.setpoints[&1];
    assert!(sp.delta_p_mw > 1.0, "local generation must rise, got {} MW", sp.delta_p_mw);
    assert!((schedule.p_ext_mw - base_sol.p_ext_mw).abs() <= 1e-3);

    let v = schedule.verification.as_ref().expect("verification record");
    assert_eq!(v.violations, 0);
    assert!(v.slack_deviation_pu.expect("fixed import tracks the deviation") <= 1e-4);
}

/// A tighter displacement power factor shrinks the reactive envelope until
/// the cone binds; the schedule must sit on it, not beyond it.
#[test]
fn tight_power_factor_envelope_binds_the_cone() {
    let net = three_bus_network(HIST_MAX_MW);
    let mut light = OperatingPoint::new(Utc.with_ymd_and_hms(2023, 7, 14, 11, 30, 0).unwrap());
    light.generators.insert(1, PqMw::new(6.0, 1.0));
    light.loads.insert(1, PqMw::new(22.5, 7.1));
    let grown = light.with_scaled_loads(1.2);

    let mut cfg = config(SlackPolicy::Free);
    cfg.envelope_pf = 0.99;
    let problem = build_problem(&net, &grown, ActivationMode::Corrective, &cfg).unwrap();
    let schedule = solve_and_verify(&problem).unwrap();
    assert_schedule_invariants(&net, &grown, &cfg, &schedule);

    let tau = cone_tau(cfg.envelope_pf);
    let sp = schedule.setpoints[&1];
    let cone_gap_mw = sp.q_mvar.abs() - tau * sp.p_mw;
    assert!(
        cone_gap_mw >= -1e-2,
        "expected the cone to bind, but |q| sits {:.3e} MW inside it",
        -cone_gap_mw
    );
    assert_eq!(schedule.verification.as_ref().unwrap().violations, 0);
}

/// Load far beyond the flexibility range: the solver must report
/// infeasibility rather than an unverifiable schedule.
#[test]
fn infeasible_when_load_exceeds_flexibility_range() {
    let net = three_bus_network(HIST_MAX_MW);
    let mut hopeless = OperatingPoint::new(Utc.with_ymd_and_hms(2023, 7, 14, 11, 30, 0).unwrap());
    hopeless.generators.insert(1, PqMw::new(6.0, 1.0));
    hopeless.loads.insert(1, PqMw::new(60.0, 20.0));
    let cfg = config(SlackPolicy::Free);
    let problem = build_problem(&net, &hopeless, ActivationMode::Corrective, &cfg).unwrap();
    match solve(&problem) {
        Err(Error::Infeasible(_)) => {}
        other => panic!("expected an infeasibility report, got {other:?}"),
    }
}

#[test]
fn secure_point_yields_zero_redispatch() {
    let net = three_bus_network(HIST_MAX_MW);
    let mut secure = OperatingPoint::new(Utc.with_ymd_and_hms(2023, 7, 14, 11, 30, 0).unwrap());
    secure.generators.insert(1, PqMw::new(10.0, 2.0));
    secure.loads.insert(1, PqMw::new(1.5, 0.4));
    let cfg = config(SlackPolicy::Free);
    let problem = build_problem(&net, &secure, ActivationMode::Corrective, &cfg).unwrap();
    let schedule = solve_and_verify(&problem).unwrap();
    assert_schedule_invariants(&net, &secure, &cfg, &schedule);
    assert!(schedule.objective < 1e-6, "objective {} on a secure point", schedule.objective);
    assert!(schedule.max_abs_delta_p_mw() < 1e-3);
    assert_eq!(schedule.verification.as_ref().unwrap().violations, 0);
}

/// Scaling both weights by a common factor must not move the optimizer, only
/// the reported objective value.
#[test]
fn objective_scales_linearly_with_weights() {
    let net = three_bus_network(HIST_MAX_MW);
    let point = base_point();
    let cfg = config(SlackPolicy::Free);
    let scale = 4.0;
    let mut scaled_cfg = config(SlackPolicy::Free);
    scaled_cfg.weights.w_p *= scale;
    scaled_cfg.weights.w_q *= scale;

    let a = solve(&build_problem(&net, &point, ActivationMode::Corrective, &cfg).unwrap()).unwrap();
    let b =
        solve(&build_problem(&net, &point, ActivationMode::Corrective, &scaled_cfg).unwrap())
            .unwrap();
    let sa = a.setpoints[&1];
    let sb = b.setpoints[&1];
    assert!((sa.p_mw - sb.p_mw).abs() < 1e-4, "p moved: {} vs {}", sa.p_mw, sb.p_mw);
    assert!((sa.q_mvar - sb.q_mvar).abs() < 1e-4, "q moved: {} vs {}", sa.q_mvar, sb.q_mvar);
    assert!(
        (b.objective - scale * a.objective).abs() / (scale * a.objective) < 1e-6,
        "objective did not scale by {scale}: {} vs {}",
        b.objective,
        a.objective
    );
}
