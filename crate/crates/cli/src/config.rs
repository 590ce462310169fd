//! Experiment configuration document (TOML).
//!
//! Every section is optional and falls back to library defaults. Unknown keys
//! anywhere are rejected. The top-level `seed` is copied into every section's
//! `seed` so one number pins the whole run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tacmamba::bench::{AccuracyConfig, LatencyConfig};
use tacmamba::encoder::EncoderConfig;
use tacmamba::runtime::RunConfig;
use tacmamba::sim::ScenarioConfig;
use tacmamba::train::{Stage1Config, Stage2Config};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub scenario: ScenarioConfig,
    pub encoder: EncoderConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub latency: LatencyConfig,
    pub accuracy: AccuracyConfig,
    pub runtime: RunConfig,
}

/// Synthetic training set used when `--data` is not given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub trajectories: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { trajectories: 200 }
    }
}


impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Schema(e.message().replace('\n', " ")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::parse(&text).map_err(|e| match e {
                    CliError::Schema(m) => CliError::Schema(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    /// Applies the top-level seed everywhere and checks every section.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let s = self.seed;
        self.scenario.seed = s;
        self.encoder.seed = s;
        self.stage1.seed = s;
        self.stage2.seed = s;
        self.latency.seed = s;
        self.accuracy.seed = s;
        self.runtime.latency.seed = s;
        self.scenario.validate()?;
        self.encoder.validate()?;
        self.stage1.validate()?;
        self.latency.validate()?;
        self.runtime.validate()?;
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_rejected_at_any_depth() {
        for doc in ["bogus = 1", "[encoder]\nd_modle = 8", "[runtime.latency]\nbase = 3", "[stage1.adam]\nlr2 = 1.0"] {
            assert!(matches!(ExperimentConfig::parse(doc), Err(CliError::Schema(_))), "{doc}");
        }
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = ExperimentConfig::parse("seed = 4\n[encoder]\nd_model = 16\n[runtime]\nclock = \"wall\"").unwrap();
        assert_eq!(c.encoder.d_model, 16);
        assert_eq!(c.encoder.d_state, EncoderConfig::default().d_state);
        assert_eq!(c.runtime.fast_hz, 100.0);
        let r = c.resolve().unwrap();
        assert_eq!((r.scenario.seed, r.stage2.seed, r.runtime.latency.seed), (4, 4, 4));
    }

    #[test]
    fn resolved_config_roundtrips() {
        let mut c = ExperimentConfig {
            seed: 9,
            ..Default::default()
        };
        c.stage1.target_accuracy = Some(0.8);
        let r = c.resolve().unwrap();
        assert_eq!(ExperimentConfig::parse(&r.to_toml()).unwrap(), r);
    }

    #[test]
    fn invalid_values_are_schema_errors() {
        let c = ExperimentConfig::parse("[runtime]\nfast_hz = 0.5").unwrap();
        assert!(matches!(c.resolve(), Err(CliError::Schema(_))));
    }
}
