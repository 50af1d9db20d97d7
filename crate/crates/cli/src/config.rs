//! Scenario files: JSON schema, defaults, validation and emission.

use std::fs;
use std::path::Path;

use backoff_tail::sim::DEFAULT_SEED;
use backoff_tail::{BackoffConfig, BackoffSpec, PhyProfile, RetryLimit, SimConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::presets;

pub const DEFAULT_N: u64 = 10;
pub const DEFAULT_SLOTS: u64 = 1_000_000;
pub const DEFAULT_RUNS: usize = 1;

/// A fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub spec: BackoffSpec<f64>,
    pub n: u64,
    pub retry_limit: RetryLimit,
    pub phy: PhyProfile<f64>,
    pub slots: u64,
    pub seed: u64,
    pub runs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhyFile {
    pub t_idle: f64,
    pub t_succ: f64,
    pub t_coll: f64,
}

/// On-disk form. Every field is optional; `preset` supplies a base that the
/// remaining fields override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_limit: Option<RetryLimit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phy: Option<PhyFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
}

fn config_err(path: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {e}"))
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            config_err(&path, e.into_inner())
        })
    }

    /// Applies presets and defaults, then validates.
    pub fn resolve(&self) -> Result<Scenario, CliError> {
        let base = match &self.preset {
            Some(name) => Some(presets::get(name)?),
            None => None,
        };
        let spec = match (&self.family, &base) {
            (Some(family), _) => {
                let cfg = BackoffConfig {
                    family: family.clone(),
                    r: self.r,
                    a: self.a,
                    b: self.b,
                    values: self.values.clone(),
                    w0: self.w0,
                };
                cfg.to_spec::<f64>().map_err(|e| config_err(&core_path(&e, "family"), e))?
            }
            (None, base) => {
                for (present, field) in [
                    (self.r.is_some(), "r"),
                    (self.a.is_some(), "a"),
                    (self.b.is_some(), "b"),
                    (self.values.is_some(), "values"),
                ] {
                    if present {
                        return Err(config_err(field, "backoff parameters need `family`"));
                    }
                }
                match base {
                    Some(b) => match self.w0 {
                        Some(w0) => b.spec.with_w0(w0).map_err(|e| config_err("w0", e))?,
                        None => b.spec.clone(),
                    },
                    None => return Err(config_err("family", "missing (give `family` or `preset`)")),
                }
            }
        };
        let phy = match self.phy {
            Some(p) => PhyProfile::new(p.t_idle, p.t_succ, p.t_coll)
                .map_err(|e| config_err(&core_path(&e, "phy"), e))?,
            None => base.as_ref().map_or_else(PhyProfile::ieee80211g, |b| b.phy),
        };
        let scenario = Scenario {
            name: self
                .name
                .clone()
                .or_else(|| base.as_ref().map(|b| b.name.clone()))
                .unwrap_or_else(|| "custom".to_string()),
            spec,
            n: self.n.or(base.as_ref().map(|b| b.n)).unwrap_or(DEFAULT_N),
            retry_limit: self
                .retry_limit
                .or(base.as_ref().map(|b| b.retry_limit))
                .unwrap_or_default(),
            phy,
            slots: self.slots.or(base.as_ref().map(|b| b.slots)).unwrap_or(DEFAULT_SLOTS),
            seed: self.seed.or(base.as_ref().map(|b| b.seed)).unwrap_or(DEFAULT_SEED),
            runs: self.runs.or(base.as_ref().map(|b| b.runs)).unwrap_or(DEFAULT_RUNS),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Field path for a core validation error; PHY fields nest under `phy`.
fn core_path(e: &backoff_tail::Error, fallback: &str) -> String {
    match e {
        backoff_tail::Error::InvalidParameter { name, .. } if fallback == "phy" => format!("phy.{name}"),
        backoff_tail::Error::InvalidParameter { name, .. } => name.to_string(),
        _ => fallback.to_string(),
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.n == 0 {
            return Err(config_err("n", "must be at least 1"));
        }
        if self.slots == 0 {
            return Err(config_err("slots", "must be at least 1"));
        }
        if self.runs == 0 {
            return Err(config_err("runs", "must be at least 1"));
        }
        if self.name.is_empty() {
            return Err(config_err("name", "must not be empty"));
        }
        Ok(())
    }

    /// Simulator configuration for the first run.
    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let n = usize::try_from(self.n).map_err(|_| config_err("n", "too large for this platform"))?;
        let cfg = SimConfig::new(n, self.spec.clone(), self.retry_limit, self.phy, self.slots, self.seed);
        cfg.validate().map_err(|e| config_err(&core_path(&e, "n"), e))?;
        Ok(cfg)
    }

    /// Fully explicit file form; [`load_str`] of its JSON gives back `self`.
    pub fn to_file(&self) -> ScenarioFile {
        let b = BackoffConfig::from(&self.spec);
        ScenarioFile {
            preset: None,
            name: Some(self.name.clone()),
            family: Some(b.family),
            r: b.r,
            a: b.a,
            b: b.b,
            values: b.values,
            w0: b.w0,
            n: Some(self.n),
            retry_limit: Some(self.retry_limit),
            phy: Some(PhyFile {
                t_idle: self.phy.t_idle,
                t_succ: self.phy.t_succ,
                t_coll: self.phy.t_coll,
            }),
            slots: Some(self.slots),
            seed: Some(self.seed),
            runs: Some(self.runs),
        }
    }
}

/// Pretty JSON of the resolved scenario.
pub fn emit(scenario: &Scenario) -> String {
    serde_json::to_string_pretty(&scenario.to_file()).expect("scenario serializes")
}

pub fn load_str(text: &str) -> Result<Scenario, CliError> {
    ScenarioFile::parse(text)?.resolve()
}

pub fn load_config(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    load_str(&text)
}
