//! Smart-meter ingestion: feeder-level CSV records, reactive-power
//! reconstruction from power-factor assumptions, substation aggregation and
//! historical maxima.
//!
//! Measurements arrive as quarter-hour feeder readings with separate
//! injection and withdrawal channels. Meters report active energy only, so
//! reactive power is reconstructed with fixed power factors per role before
//! the records feed the power flow.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use chrono::{DateTime, Duration, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default displacement power factor assumed for consumption.
pub const DEFAULT_LOAD_PF: f64 = 0.95;
/// Default displacement power factor assumed for distributed generation.
pub const DEFAULT_GEN_PF: f64 = 0.99;

/// Measurement interval of the smart-meter data.
pub const STEP_MINUTES: i64 = 15;

/// One feeder reading for one quarter-hour interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederMeasurement {
    pub timestamp: DateTime<Utc>,
    pub substation_id: String,
    pub feeder_id: String,
    /// Active power fed into the grid over the interval (kW).
    pub injected_kw: f64,
    /// Active power drawn from the grid over the interval (kW).
    pub withdrawn_kw: f64,
}

/// What to do when a feeder has no record at a grid timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapPolicy {
    /// Drop the timestamp for the affected substation.
    Skip,
    /// Carry the feeder's previous reading forward.
    HoldLast,
    /// Treat the missing reading as zero power.
    Zero,
}

impl Default for GapPolicy {
    fn default() -> Self {
        GapPolicy::HoldLast
    }
}

/// Power factors used for reactive-power reconstruction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerFactors {
    pub load: f64,
    pub generation: f64,
}

impl Default for PowerFactors {
    fn default() -> Self {
        PowerFactors {
            load: DEFAULT_LOAD_PF,
            generation: DEFAULT_GEN_PF,
        }
    }
}

impl PowerFactors {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [(self.load, "load"), (self.generation, "generation")] {
            if !(v.is_finite() && v > 0.0 && v <= 1.0) {
                return Err(Error::data(format!(
                    "power factor `{name}` must lie in (0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Reactive power implied by active power `p` at displacement power factor
/// `pf`, same sign convention as `p`. `Q = P tan(acos pf)`.
pub fn reactive_from_pf(p: f64, pf: f64) -> f64 {
    debug_assert!(pf > 0.0 && pf <= 1.0);
    p * (1.0 - pf * pf).sqrt() / pf
}

/// Streaming record validator. Accepts records one at a time, enforces the
/// quarter-hour grid and duplicate rules, and hands back the ordered batch.
#[derive(Debug, Default)]
pub struct MeasurementIngestor {
    records: Vec<FeederMeasurement>,
    /// (feeder, timestamp) -> source line of the first occurrence.
    seen: HashMap<(String, DateTime<Utc>), u64>,
}

impl MeasurementIngestor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates and accepts one record. `line` is the source location used
    /// in error messages (1-based; pass 0 when unknown).
    pub fn push(&mut self, rec: FeederMeasurement, line: u64) -> Result<()> {
        if rec.timestamp.minute() as i64 % STEP_MINUTES != 0
            || rec.timestamp.second() != 0
            || rec.timestamp.nanosecond() != 0
        {
            return Err(Error::data(format!(
                "line {line}: timestamp {} is not on the {STEP_MINUTES}-minute grid",
                rec.timestamp.to_rfc3339()
            )));
        }
        for (v, name) in [(rec.injected_kw, "injected_kw"), (rec.withdrawn_kw, "withdrawn_kw")] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::data(format!(
                    "line {line}: {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if rec.substation_id.is_empty() || rec.feeder_id.is_empty() {
            return Err(Error::data(format!(
                "line {line}: substation_id and feeder_id must be non-empty"
            )));
        }
        let key = (rec.feeder_id.clone(), rec.timestamp);
        if let Some(first) = self.seen.get(&key) {
            return Err(Error::data(format!(
                "line {line}: duplicate record for feeder {} at {} (first seen at line {first})",
                rec.feeder_id,
                rec.timestamp.to_rfc3339()
            )));
        }
        self.seen.insert(key, line);
        self.records.push(rec);
        Ok(())
    }

    /// Finishes the stream: records sorted by timestamp, then substation,
    /// then feeder.
    pub fn finish(mut self) -> Vec<FeederMeasurement> {
        self.records.sort_by(|a, b| {
            (a.timestamp, &a.substation_id, &a.feeder_id)
                .cmp(&(b.timestamp, &b.substation_id, &b.feeder_id))
        });
        self.records
    }
}

/// Parses the measurement CSV (`timestamp,substation_id,feeder_id,
/// injected_kw,withdrawn_kw`) into validated, time-ordered records.
pub fn parse_measurements<R: Read>(reader: R) -> Result<Vec<FeederMeasurement>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);

    {
        let headers = csv.headers()?;
        let expected = ["timestamp", "substation_id", "feeder_id", "injected_kw", "withdrawn_kw"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(Error::data(format!(
                "measurement header mismatch: expected {expected:?}, got {got:?}"
            )));
        }
    }

    let mut ingestor = MeasurementIngestor::new();
    for row in csv.records() {
        let row = row.map_err(|e| Error::data(format!("malformed measurement row: {e}")))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != 5 {
            return Err(Error::data(format!(
                "line {line}: expected 5 columns, got {}",
                row.len()
            )));
        }
        let timestamp = DateTime::parse_from_rfc3339(&row[0])
            .map_err(|e| Error::data(format!("line {line}: bad timestamp `{}`: {e}", &row[0])))?
            .with_timezone(&Utc);
        let parse_kw = |field: &str, name: &str| -> Result<f64> {
            field
                .parse::<f64>()
                .map_err(|_| Error::data(format!("line {line}: {name} `{field}` is not a number")))
        };
        let rec = FeederMeasurement {
            timestamp,
            substation_id: row[1].to_string(),
            feeder_id: row[2].to_string(),
            injected_kw: parse_kw(&row[3], "injected_kw")?,
            withdrawn_kw: parse_kw(&row[4], "withdrawn_kw")?,
        };
        ingestor.push(rec, line)?;
    }
    Ok(ingestor.finish())
}

/// One aggregated substation sample on the quarter-hour grid (MW / MVAr).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubstationSample {
    pub timestamp: DateTime<Utc>,
    pub p_gen_mw: f64,
    pub q_gen_mvar: f64,
    pub p_load_mw: f64,
    pub q_load_mvar: f64,
}

/// Aggregated equivalent series of one substation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SubstationSeries {
    pub samples: Vec<SubstationSample>,
}

impl SubstationSeries {
    pub fn sample_at(&self, t: DateTime<Utc>) -> Option<&SubstationSample> {
        self.samples
            .binary_search_by_key(&t, |s| s.timestamp)
            .ok()
            .map(|i| &self.samples[i])
    }
}

/// One gap-policy application, kept for the run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapEvent {
    pub timestamp: DateTime<Utc>,
    pub substation_id: String,
    pub feeder_id: String,
    pub policy: GapPolicy,
}

/// Result of substation aggregation.
#[derive(Debug, Clone, Default)]
pub struct AggregationOutcome {
    pub series: BTreeMap<String, SubstationSeries>,
    pub gaps: Vec<GapEvent>,
}

/// Aggregates feeder records to net substation equivalents.
///
/// Per substation and timestamp, generation is the sum of the feeder
/// injection channels and load the sum of the withdrawal channels, both
/// converted from kW to MW. Reactive power is reconstructed per role from
/// `pf`. Feeders are summed in ascending feeder-id order so the result does
/// not depend on input order. The time grid per substation spans the first
/// to the last timestamp seen on any of its feeders; holes are handled per
/// `policy` and reported in the outcome. Under `GapPolicy::HoldLast` a
/// feeder without any earlier reading contributes zero.
pub fn aggregate_to_substation(
    records: &[FeederMeasurement],
    policy: GapPolicy,
    pf: &PowerFactors,
) -> Result<AggregationOutcome> {
    pf.validate()?;
    let step = Duration::minutes(STEP_MINUTES);

    // substation -> feeder -> timestamp -> (inj, wdr) kW.
    let mut subs: BTreeMap<&str, BTreeMap<&str, BTreeMap<DateTime<Utc>, (f64, f64)>>> =
        BTreeMap::new();
    for r in records {
        subs.entry(&r.substation_id)
            .or_default()
            .entry(&r.feeder_id)
            .or_default()
            .insert(r.timestamp, (r.injected_kw, r.withdrawn_kw));
    }

    let mut out = AggregationOutcome::default();
    for (sub, feeders) in subs {
        let t0 = feeders
            .values()
            .filter_map(|m| m.keys().next())
            .min()
            .copied()
            .ok_or_else(|| Error::data(format!("substation {sub} has no feeder records")))?;
        let t1 = feeders
            .values()
            .filter_map(|m| m.keys().next_back())
            .max()
            .copied()
            .expect("non-empty by construction");

        let mut series = SubstationSeries::default();
        let mut held: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
        let mut t = t0;
        while t <= t1 {
            let mut inj_kw = 0.0;
            let mut wdr_kw = 0.0;
            let mut drop_timestamp = false;
            for (feeder, readings) in &feeders {
                match readings.get(&t) {
                    Some(&(inj, wdr)) => {
                        held.insert(feeder, (inj, wdr));
                        inj_kw += inj;
                        wdr_kw += wdr;
                    }
                    None => {
                        out.gaps.push(GapEvent {
                            timestamp: t,
                            substation_id: sub.to_string(),
                            feeder_id: feeder.to_string(),
                            policy,
                        });
                        match policy {
                            GapPolicy::Skip => {
                                drop_timestamp = true;
                            }
                            GapPolicy::HoldLast => {
                                let (inj, wdr) = held.get(feeder).copied().unwrap_or((0.0, 0.0));
                                inj_kw += inj;
                                wdr_kw += wdr;
                            }
                            GapPolicy::Zero => {}
                        }
                    }
                }
            }
            if !drop_timestamp {
                let p_gen_mw = inj_kw / 1000.0;
                let p_load_mw = wdr_kw / 1000.0;
                series.samples.push(SubstationSample {
                    timestamp: t,
                    p_gen_mw,
                    q_gen_mvar: reactive_from_pf(p_gen_mw, pf.generation),
                    p_load_mw,
                    q_load_mvar: reactive_from_pf(p_load_mw, pf.load),
                });
            }
            t += step;
        }
        out.series.insert(sub.to_string(), series);
    }
    Ok(out)
}

/// Historical maximum generation (MW) over an aggregated series.
///
/// Errors when the series is empty; an all-zero series legitimately returns
/// zero and freezes the unit in the redispatch problem.
pub fn historical_max(series: &SubstationSeries) -> Result<f64> {
    if series.samples.is_empty() {
        return Err(Error::data("historical maximum of an empty series"));
    }
    Ok(series
        .samples
        .iter()
        .map(|s| s.p_gen_mw)
        .fold(0.0_f64, f64::max))
}

/// Sorted union of all sample timestamps across substations.
pub fn horizon(series: &BTreeMap<String, SubstationSeries>) -> Vec<DateTime<Utc>> {
    let mut set = BTreeSet::new();
    for s in series.values() {
        for sample in &s.samples {
            set.insert(sample.timestamp);
        }
    }
    set.into_iter().collect()
}

/// Writes aggregated series to CSV (`timestamp,substation_id,p_gen_mw,
/// q_gen_mvar,p_load_mw,q_load_mvar`). Floats are written in shortest
/// round-trip form, so reading the file back reproduces identical values.
pub fn write_series_csv<W: std::io::Write>(
    w: W,
    series: &BTreeMap<String, SubstationSeries>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "timestamp",
        "substation_id",
        "p_gen_mw",
        "q_gen_mvar",
        "p_load_mw",
        "q_load_mvar",
    ])?;
    for t in horizon(series) {
        for (sub, s) in series {
            if let Some(sample) = s.sample_at(t) {
                wtr.write_record([
                    t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                    sub.clone(),
                    format!("{}", sample.p_gen_mw),
                    format!("{}", sample.q_gen_mvar),
                    format!("{}", sample.p_load_mw),
                    format!("{}", sample.q_load_mvar),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads the CSV written by [`write_series_csv`].
pub fn read_series_csv<R: Read>(r: R) -> Result<BTreeMap<String, SubstationSeries>> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let mut out: BTreeMap<String, SubstationSeries> = BTreeMap::new();
    for row in csv.records() {
        let row = row?;
        let t = DateTime::parse_from_rfc3339(&row[0])
            .map_err(|e| Error::data(format!("bad timestamp in series csv: {e}")))?
            .with_timezone(&Utc);
        let parse = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|_| Error::data(format!("bad number `{}` in series csv", &row[i])))
        };
        out.entry(row[1].to_string())
            .or_default()
            .samples
            .push(SubstationSample {
                timestamp: t,
                p_gen_mw: parse(2)?,
                q_gen_mvar: parse(3)?,
                p_load_mw: parse(4)?,
                q_load_mvar: parse(5)?,
            });
    }
    for s in out.values_mut() {
        s.samples.sort_by_key(|x| x.timestamp);
    }
    Ok(out)
}
