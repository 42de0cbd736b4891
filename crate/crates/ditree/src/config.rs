//! Run configuration.
//!
//! A single TOML file collects every tunable in one place:
//!
//! ```toml
//! [planner]
//! time_budget = 30.0
//! n_actions = 64
//!
//! [sample]
//! denoise_steps = 1
//!
//! [train]
//! epochs = 3000
//!
//! [car]
//! v_max = 3.0
//!
//! [gen]
//! clearance = 0.15
//! ```
//!
//! Every section and every field is optional; anything omitted falls back to
//! the built-in default. Unknown keys are rejected so typos fail loudly
//! instead of silently running with defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::CarParams;
use crate::error::{Error, Result};
use crate::expert::GenConfig;
use crate::planner::PlannerConfig;
use crate::policy::{SampleConfig, TrainConfig};

/// Everything a run can be configured with, grouped by subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub planner: PlannerConfig,
    pub sample: SampleConfig,
    pub train: TrainConfig,
    pub car: CarParams,
    pub gen: GenConfig,
}

impl AppConfig {
    /// Parse a config from TOML text and validate it.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: AppConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file from disk.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    /// Serialize to TOML. `max_iterations` is clamped to `i64::MAX` because
    /// TOML has no unsigned integers; the clamp only affects the written
    /// file, and any value that large is an "unlimited" sentinel anyway.
    pub fn to_toml_string(&self) -> Result<String> {
        let mut cfg = self.clone();
        cfg.planner.max_iterations = cfg.planner.max_iterations.min(i64::MAX as usize);
        toml::to_string_pretty(&cfg)
            .map_err(|e| Error::Config(format!("config serialize error: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.planner.validate()?;
        self.sample.validate()?;
        self.train.validate()?;
        self.car.validate()?;
        self.gen.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_yields_defaults() {
        let cfg = AppConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, AppConfig::default());
    }

    #[test]
    fn partial_file_overrides_only_named_fields() {
        let cfg = AppConfig::from_toml_str(
            "[planner]\ntime_budget = 30.0\n\n[sample]\nk = 8\n",
        )
        .unwrap();
        assert_eq!(cfg.planner.time_budget, 30.0);
        assert_eq!(cfg.sample.k, 8);
        // Untouched fields keep their defaults.
        assert_eq!(cfg.planner.n_actions, AppConfig::default().planner.n_actions);
        assert_eq!(cfg.train, AppConfig::default().train);
        assert_eq!(cfg.car, AppConfig::default().car);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = AppConfig::default();
        cfg.planner.time_budget = 7.5;
        cfg.planner.max_iterations = 5000;
        cfg.sample.k = 4;
        cfg.train.epochs = 123;
        cfg.car.v_max = 2.5;
        cfg.gen.clearance = 0.2;
        let text = cfg.to_toml_string().unwrap();
        let back = AppConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(AppConfig::from_toml_str("[planner]\ntime_budgett = 30.0\n").is_err());
        assert!(AppConfig::from_toml_str("[plannerr]\ntime_budget = 30.0\n").is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(AppConfig::from_toml_str("[planner]\ndt = -0.1\n").is_err());
        assert!(AppConfig::from_toml_str("[sample]\nk = 0\n").is_err());
        assert!(AppConfig::from_toml_str("[car]\nv_min = 5.0\nv_max = 1.0\n").is_err());
    }

    #[test]
    fn load_reads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[planner]\nrng_seed = 42\n").unwrap();
        let cfg = AppConfig::load(&path).unwrap();
        assert_eq!(cfg.planner.rng_seed, 42);
        assert!(AppConfig::load(dir.path().join("missing.toml")).is_err());
    }
}
