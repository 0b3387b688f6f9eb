//! Deterministic synthetic fixture: a 16-substation island grid fed over a
//! single sea cable, plus a year of quarter-hour feeder measurements.
//!
//! The network is a 60 kV ring with six chords, one 60/10 kV transformer
//! per substation and the aggregated units on the 10 kV side. The
//! measurement generator layers diurnal, weekly and seasonal shapes with
//! hash-derived smooth noise, so any horizon regenerates bit-identically
//! from the seed without stored state.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, TimeZone, Timelike, Utc};

use crate::config::RunConfig;
use crate::error::Result;
use crate::ingestion::FeederMeasurement;
use crate::network::{
    Bus, BusKind, ExternalGrid, Generator, Line, Load, Network, NetworkParts, Shunt, Transformer,
};

pub const DEFAULT_SEED: u64 = 0x5EED_2023;
pub const SUBSTATIONS: usize = 16;
/// Quarter hours in the fixture year (2023, no leap day).
pub const YEAR_STEPS: usize = 365 * 96;

/// (wind capacity MW, pv capacity MW, base load MW) per substation.
const SUBS: [(f64, f64, f64); SUBSTATIONS] = [
    (0.8, 0.3, 2.1),
    (5.5, 0.4, 1.5),
    (1.2, 0.6, 1.8),
    (0.6, 0.8, 2.4),
    (2.2, 0.3, 1.2),
    (4.8, 0.5, 1.6),
    (0.9, 0.7, 2.2),
    (1.5, 0.4, 1.9),
    (0.5, 0.9, 2.6),
    (5.2, 0.3, 1.3),
    (1.8, 0.5, 1.7),
    (0.7, 0.6, 2.3),
    (2.8, 0.4, 3.3),
    (1.1, 0.8, 1.8),
    (3.0, 0.3, 1.1),
    (0.6, 0.5, 2.2),
];

/// Ring segment lengths (km); segment k joins ring bus k+1 to k+2, the last
/// one closes the ring. The 12-13-14 arc is deliberately long, making the
/// heavily loaded substation 13 the electrically weakest point.
const RING_KM: [f64; SUBSTATIONS] = [
    5.5, 4.2, 6.8, 3.9, 7.4, 5.1, 4.6, 6.2, 5.8, 4.9, 7.1, 9.5, 8.5, 6.6, 4.4, 5.3,
];

/// Chords (hv bus a, hv bus b, km); none reaches the weak 12-14 arc.
const CHORDS: [(u32, u32, f64); 6] = [
    (2, 8, 7.2),
    (4, 12, 10.1),
    (6, 14, 9.3),
    (10, 16, 6.4),
    (3, 9, 8.2),
    (5, 11, 7.6),
];

const RING_R: f64 = 0.125;
const RING_X: f64 = 0.305;
const RING_C: f64 = 9.6;
const RING_I: f64 = 0.5;

fn sub_name(k: usize) -> String {
    format!("S{:02}", k + 1)
}

/// Standard transformer size covering both the load peak and full DER
/// output with margin.
fn trafo_sn(k: usize) -> f64 {
    let (wind, pv, load) = SUBS[k];
    let need = (load * 1.45 / 0.95).max((wind + pv) / 0.99) * 1.3;
    for sn in [4.0, 5.0, 6.3, 8.0, 10.0, 12.5, 16.0, 20.0] {
        if sn >= need {
            return sn;
        }
    }
    25.0
}

/// Builds the fixture network with the given per-generator historical
/// maxima (MW, generator ids 1..=16).
pub fn network_with_hist(hist_max_mw: &BTreeMap<u32, f64>) -> Network {
    let mut buses = vec![Bus {
        id: 0,
        name: "EXT".into(),
        vn_kv: 60.0,
        kind: BusKind::Slack,
        in_service: true,
    }];
    for k in 0..SUBSTATIONS {
        buses.push(Bus {
            id: k as u32 + 1,
            name: format!("{}-HV", sub_name(k)),
            vn_kv: 60.0,
            kind: BusKind::Pq,
            in_service: true,
        });
        buses.push(Bus {
            id: k as u32 + 101,
            name: sub_name(k),
            vn_kv: 10.0,
            kind: BusKind::Pq,
            in_service: true,
        });
    }

    let mut lines = vec![Line {
        id: 1,
        from_bus: 0,
        to_bus: 1,
        length_km: 48.0,
        r_ohm_per_km: 0.032,
        x_ohm_per_km: 0.115,
        c_nf_per_km: 195.0,
        max_i_ka: 0.62,
        in_service: true,
    }];
    for k in 0..SUBSTATIONS {
        let from = k as u32 + 1;
        let to = if k == SUBSTATIONS - 1 { 1 } else { k as u32 + 2 };
        lines.push(Line {
            id: k as u32 + 2,
            from_bus: from,
            to_bus: to,
            length_km: RING_KM[k],
            r_ohm_per_km: RING_R,
            x_ohm_per_km: RING_X,
            c_nf_per_km: RING_C,
            max_i_ka: RING_I,
            in_service: true,
        });
    }
    for (i, &(a, b, km)) in CHORDS.iter().enumerate() {
        lines.push(Line {
            id: 18 + i as u32,
            from_bus: a,
            to_bus: b,
            length_km: km,
            r_ohm_per_km: RING_R,
            x_ohm_per_km: RING_X,
            c_nf_per_km: RING_C,
            max_i_ka: RING_I,
            in_service: true,
        });
    }

    let transformers = (0..SUBSTATIONS)
        .map(|k| Transformer {
            id: k as u32 + 1,
            hv_bus: k as u32 + 1,
            lv_bus: k as u32 + 101,
            sn_mva: trafo_sn(k),
            vk_percent: 11.2 + (k % 5) as f64 * 0.25,
            vkr_percent: 0.48 + (k % 4) as f64 * 0.04,
            vn_hv_kv: 60.0,
            vn_lv_kv: 10.0,
            in_service: true,
        })
        .collect();

    let shunts = vec![
        Shunt {
            id: 1,
            bus: 1,
            q_mvar: 4.5,
            p_mw: 0.02,
            in_service: true,
        },
        Shunt {
            id: 2,
            bus: 9,
            q_mvar: -2.0,
            p_mw: 0.0,
            in_service: true,
        },
    ];

    let generators = (0..SUBSTATIONS)
        .map(|k| Generator {
            id: k as u32 + 1,
            bus: k as u32 + 101,
            p_hist_max_mw: hist_max_mw.get(&(k as u32 + 1)).copied().unwrap_or(0.0),
            in_service: true,
        })
        .collect();
    let loads = (0..SUBSTATIONS)
        .map(|k| Load {
            id: k as u32 + 1,
            bus: k as u32 + 101,
            in_service: true,
        })
        .collect();

    Network::from_parts(
        NetworkParts { buses, lines, transformers, shunts, generators, loads },
        ExternalGrid { bus: 0, vm_pu: 1.02 },
        100.0,
        50.0,
    )
    .expect("fixture network must validate")
}

/// Horizon controls for the measurement generator.
#[derive(Debug, Clone, Copy)]
pub struct FixtureSpec {
    pub seed: u64,
    pub start: DateTime<Utc>,
    pub steps: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            seed: DEFAULT_SEED,
            start: Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap(),
            steps: YEAR_STEPS,
        }
    }
}

impl FixtureSpec {
    pub fn timestamp(&self, step: usize) -> DateTime<Utc> {
        self.start + Duration::minutes(15 * step as i64)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in [-1, 1] from a hash of (seed, tag, k, t).
fn hash_noise(seed: u64, tag: u64, k: usize, t: u64) -> f64 {
    let h = splitmix(seed ^ tag.rotate_left(17) ^ ((k as u64) << 40) ^ t);
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Piecewise-linear noise with roughly two-hour correlation.
fn smooth_noise(seed: u64, tag: u64, k: usize, step: usize) -> f64 {
    let block = step as u64 / 8;
    let frac = (step % 8) as f64 / 8.0;
    let a = hash_noise(seed, tag, k, block);
    let b = hash_noise(seed, tag, k, block + 1);
    a + (b - a) * frac
}

/// Generation and load of one substation at one step (MW, pre-split).
fn substation_power(spec: &FixtureSpec, k: usize, step: usize) -> (f64, f64) {
    let t = spec.timestamp(step);
    let hour = t.hour() as f64 + t.minute() as f64 / 60.0;
    let doy = t.ordinal0() as f64;
    let day = step as f64 / 96.0;
    let (wind_cap, pv_cap, load_base) = SUBS[k];

    // Island-wide wind weather with small per-site shifts.
    let ph = |i: u64| hash_noise(spec.seed, 1000 + i, 0, 0) * std::f64::consts::PI;
    let site = k as f64 * 0.05;
    let mut cf = 0.42
        + 0.30 * (std::f64::consts::TAU * day / 4.7 + ph(1) + site).sin()
        + 0.20 * (std::f64::consts::TAU * day / 1.13 + ph(2) + 2.0 * site).sin()
        + 0.10 * (std::f64::consts::TAU * day / 23.0 + ph(3)).sin()
        + 0.12 * smooth_noise(spec.seed, 2, k, step);
    cf *= 1.0 + 0.14 * (std::f64::consts::TAU * doy / 365.0).cos();
    let wind = wind_cap * cf.clamp(0.0, 0.97);

    let cs = if (6.5..17.5).contains(&hour) {
        ((hour - 6.5) / 11.0 * std::f64::consts::PI).sin().powf(1.35)
    } else {
        0.0
    };
    let pv_season = 0.30 + 0.78 * (0.5 - 0.5 * (std::f64::consts::TAU * (doy - 172.0) / 365.0).cos());
    let cloud = 0.55 + 0.45 * (0.5 + 0.5 * smooth_noise(spec.seed, 3, k, step));
    let pv = pv_cap * (cs * pv_season * cloud).clamp(0.0, 1.0);

    let diurnal = 0.70
        + 0.16 * (-((hour - 9.0) / 2.8).powi(2)).exp()
        + 0.30 * (-((hour - 18.6) / 2.6).powi(2)).exp();
    let season = 1.0 + 0.17 * (std::f64::consts::TAU * (doy - 18.0) / 365.0).cos();
    // 2023-01-01 is a Sunday.
    let dow = (t.ordinal0() as usize + 6) % 7;
    let weekend = if dow >= 5 { 0.93 } else { 1.0 };
    let noise = 1.0 + 0.05 * smooth_noise(spec.seed, 4, k, step);
    let load = load_base * diurnal * season * weekend * noise;

    ((wind + pv).max(0.0), load.max(0.0))
}

/// Splits a substation quantity over its two feeders, quantized to 0.1 kW
/// exactly like the emitted CSV.
fn feeder_split_kw(total_mw: f64) -> [f64; 2] {
    let kw = total_mw * 1000.0;
    let f1 = (kw * 0.6 * 10.0).round() / 10.0;
    let f2 = (kw * 0.4 * 10.0).round() / 10.0;
    [f1, f2]
}

/// Per-generator historical maxima (MW) over a horizon, computed from the
/// same quantized values the CSV carries.
pub fn hist_max_over(spec: &FixtureSpec) -> BTreeMap<u32, f64> {
    let mut out = BTreeMap::new();
    for k in 0..SUBSTATIONS {
        let mut max_mw = 0.0_f64;
        for step in 0..spec.steps {
            let (gen, _) = substation_power(spec, k, step);
            let [f1, f2] = feeder_split_kw(gen);
            max_mw = max_mw.max((f1 + f2) / 1000.0);
        }
        out.insert(k as u32 + 1, max_mw);
    }
    out
}

/// Fixture network whose declared maxima match the generated horizon.
pub fn network_for(spec: &FixtureSpec) -> Network {
    network_with_hist(&hist_max_over(spec))
}

/// Default fixture network over the full year horizon.
pub fn default_network() -> Network {
    network_for(&FixtureSpec::default())
}

/// In-memory measurement batch; prefer [`write_measurements_csv`] for long
/// horizons.
pub fn measurements_for(spec: &FixtureSpec) -> Vec<FeederMeasurement> {
    let mut out = Vec::with_capacity(spec.steps * SUBSTATIONS * 2);
    for step in 0..spec.steps {
        let t = spec.timestamp(step);
        for k in 0..SUBSTATIONS {
            let (gen, load) = substation_power(spec, k, step);
            let inj = feeder_split_kw(gen);
            let wdr = feeder_split_kw(load);
            for f in 0..2 {
                out.push(FeederMeasurement {
                    timestamp: t,
                    substation_id: sub_name(k),
                    feeder_id: format!("{}-F{}", sub_name(k), f + 1),
                    injected_kw: inj[f],
                    withdrawn_kw: wdr[f],
                });
            }
        }
    }
    out
}

/// Streams the measurement CSV for a horizon.
pub fn write_measurements_csv<W: Write>(w: W, spec: &FixtureSpec) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["timestamp", "substation_id", "feeder_id", "injected_kw", "withdrawn_kw"])?;
    for step in 0..spec.steps {
        let t = spec.timestamp(step).to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        for k in 0..SUBSTATIONS {
            let (gen, load) = substation_power(spec, k, step);
            let inj = feeder_split_kw(gen);
            let wdr = feeder_split_kw(load);
            for f in 0..2 {
                wtr.write_record([
                    t.clone(),
                    sub_name(k),
                    format!("{}-F{}", sub_name(k), f + 1),
                    format!("{}", inj[f]),
                    format!("{}", wdr[f]),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Run configuration shipped with the fixture. The island operates a
/// tighter upper voltage band than the engine default: sea-cable charging
/// holds the ring high at light load, so 1.04 pu is what the operator
/// actually enforces there.
pub fn fixture_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.limits.v_max_pu = 1.04;
    cfg
}

/// Writes `network.json`, `measurements.csv` and `config.json` into `dir`.
pub fn write_fixture(dir: impl AsRef<Path>, spec: &FixtureSpec) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let net = network_for(spec);
    std::fs::write(
        dir.join("network.json"),
        serde_json::to_string_pretty(&net)? + "\n",
    )?;
    let file = std::fs::File::create(dir.join("measurements.csv"))?;
    write_measurements_csv(std::io::BufWriter::new(file), spec)?;
    fixture_config().save(dir.join("config.json"))?;
    Ok(())
}
