//! Run configuration for the twin harness and CLI.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::{GapPolicy, PowerFactors};
use crate::powerflow::SolverOptions;
use crate::rsae::SecurityLimits;
use crate::smfae::RedispatchWeights;

/// One scenario of the sweep: a load scaling plus engine switches.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Factor applied to both load channels of every operating point.
    pub load_scale: f64,
    /// Assess limits on every timestamp.
    pub rsae: bool,
    /// Run the N-1 sweep; it always analyzes the unscaled base state.
    pub cae: bool,
    /// Run corrective redispatch on violated timestamps (and preventive
    /// redispatch on violated contingencies when `cae` is on).
    pub smfae: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "base".into(),
            load_scale: 1.0,
            rsae: true,
            cae: false,
            smfae: true,
        }
    }
}

/// Full configuration of a twin run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub limits: SecurityLimits,
    pub solver: SolverOptions,
    pub weights: RedispatchWeights,
    pub power_factors: PowerFactors,
    pub gap_policy: GapPolicy,
    pub scenarios: Vec<ScenarioConfig>,
    /// Worker threads for sweeps; 0 picks the number of cores.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            limits: SecurityLimits::default(),
            solver: SolverOptions::default(),
            weights: RedispatchWeights::default(),
            power_factors: PowerFactors::default(),
            gap_policy: GapPolicy::default(),
            scenarios: vec![
                ScenarioConfig {
                    name: "base".into(),
                    load_scale: 1.0,
                    rsae: true,
                    cae: true,
                    smfae: true,
                },
                ScenarioConfig {
                    name: "load-minus-20".into(),
                    load_scale: 0.8,
                    rsae: true,
                    cae: false,
                    smfae: true,
                },
                ScenarioConfig {
                    name: "load-plus-20".into(),
                    load_scale: 1.2,
                    rsae: true,
                    cae: false,
                    smfae: true,
                },
            ],
            jobs: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&raw)
            .map_err(|e| Error::data(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.limits.validate()?;
        self.power_factors.validate()?;
        self.weights.validate()?;
        if self.scenarios.is_empty() {
            return Err(Error::data("config needs at least one scenario"));
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.scenarios {
            if s.name.is_empty() {
                return Err(Error::data("scenario name must be non-empty"));
            }
            if !names.insert(&s.name) {
                return Err(Error::data(format!("duplicate scenario name `{}`", s.name)));
            }
            if !(s.load_scale.is_finite() && s.load_scale > 0.0) {
                return Err(Error::data(format!(
                    "scenario `{}`: load_scale must be positive",
                    s.name
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let raw = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), raw + "\n")?;
        Ok(())
    }
}

/// Input artifact paths for a run, resolved by the CLI.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub network: PathBuf,
    pub measurements: PathBuf,
    pub out_dir: PathBuf,
}
