//! Experiment configuration: one TOML document describing the market, the
//! population, the adversary, and the batch runner, with environment
//! overrides for scripted sweeps.
//!
//! Overrides use the `MVFC_<SECTION>_<FIELD>` convention, e.g.
//! `MVFC_RUN_RUNS=25` or `MVFC_ATTACK_COORDINATION=0.9`. Values are parsed
//! against the type of the field they replace; list-valued fields accept
//! comma-separated entries.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AttackConfig, BehaviorParams, PopulationCounts};
use crate::controller::{ControllerParams, Method};
use crate::market::{MarketParams, ShockKind};
use crate::risk::RiskParams;
use crate::trust::TrustParams;

pub const ENV_PREFIX: &str = "MVFC_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("toml parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("toml serialize: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("override {variable}: {message}")]
    Override { variable: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Batch-runner settings: how many runs, which methods and scenarios, and
/// where results land.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    /// Base seed; run `i` uses `base_seed + i`, shared across methods so
    /// comparisons are paired.
    pub base_seed: u64,
    /// Runs per (method, scenario) cell.
    pub runs: usize,
    /// Worker threads; 0 picks the machine's parallelism.
    pub jobs: usize,
    pub out_dir: String,
    pub methods: Vec<Method>,
    pub shocks: Vec<ShockKind>,
    /// Write per-step trajectory and trust CSVs for each run (summaries are
    /// always written).
    pub write_runs: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            base_seed: 42,
            runs: 100,
            jobs: 0,
            out_dir: "out".to_string(),
            methods: Method::ALL.to_vec(),
            shocks: vec![ShockKind::Normal, ShockKind::BlackThursday],
            write_runs: false,
        }
    }
}

/// The complete, serializable description of an experiment.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub market: MarketParams,
    pub behavior: BehaviorParams,
    pub attack: AttackConfig,
    pub counts: PopulationCounts,
    pub trust: TrustParams,
    pub risk: RiskParams,
    pub controller: ControllerParams,
    pub run: RunSettings,
}

impl ExperimentConfig {
    /// The standard quick evaluation: 100 paired runs per cell.
    pub fn quick() -> Self {
        ExperimentConfig {
            run: RunSettings {
                runs: 100,
                ..RunSettings::default()
            },
            ..ExperimentConfig::default()
        }
    }

    /// The full evaluation: 300 paired runs per cell.
    pub fn full() -> Self {
        ExperimentConfig {
            run: RunSettings {
                runs: 300,
                ..RunSettings::default()
            },
            ..ExperimentConfig::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Applies `MVFC_*` environment overrides from the ambient environment.
    pub fn apply_env_overrides(&mut self) -> Result<Vec<String>, ConfigError> {
        let vars: Vec<(String, String)> = std::env::vars()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        self.apply_overrides(&vars)
    }

    /// Applies explicit `(variable, value)` overrides; returns the list of
    /// dotted paths that changed.
    pub fn apply_overrides(
        &mut self,
        vars: &[(String, String)],
    ) -> Result<Vec<String>, ConfigError> {
        if vars.is_empty() {
            return Ok(Vec::new());
        }
        let mut doc = toml::Value::try_from(&*self).map_err(ConfigError::Serialize)?;
        let mut applied = Vec::new();
        let mut sorted: Vec<&(String, String)> = vars.iter().collect();
        sorted.sort();
        for (key, value) in sorted {
            let remainder = match key.strip_prefix(ENV_PREFIX) {
                Some(r) if !r.is_empty() => r.to_ascii_lowercase(),
                _ => continue,
            };
            let (section, field) =
                remainder
                    .split_once('_')
                    .ok_or_else(|| ConfigError::Override {
                        variable: key.clone(),
                        message: "expected MVFC_<SECTION>_<FIELD>".to_string(),
                    })?;
            let table = doc
                .get_mut(section)
                .and_then(|v| v.as_table_mut())
                .ok_or_else(|| ConfigError::Override {
                    variable: key.clone(),
                    message: format!("unknown section '{section}'"),
                })?;
            let slot = table.get_mut(field).ok_or_else(|| ConfigError::Override {
                variable: key.clone(),
                message: format!("unknown field '{field}' in section '{section}'"),
            })?;
            *slot = parse_override(slot, value).map_err(|message| ConfigError::Override {
                variable: key.clone(),
                message,
            })?;
            applied.push(format!("{section}.{field}"));
        }
        *self = doc.try_into().map_err(ConfigError::Parse)?;
        Ok(applied)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.market.validate().map_err(ConfigError::Invalid)?;
        self.attack.validate().map_err(ConfigError::Invalid)?;
        self.trust
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.risk
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.controller
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.run.runs == 0 {
            return Err(ConfigError::Invalid("run.runs must be positive".into()));
        }
        if self.run.methods.is_empty() || self.run.shocks.is_empty() {
            return Err(ConfigError::Invalid(
                "run.methods and run.shocks must be non-empty".into(),
            ));
        }
        if self.counts.total() == 0 {
            return Err(ConfigError::Invalid("population is empty".into()));
        }
        if self.controller.stress_horizon < self.trust.window as u32 {
            return Err(ConfigError::Invalid(format!(
                "stress_horizon {} is shorter than the trust window {}",
                self.controller.stress_horizon, self.trust.window
            )));
        }
        Ok(())
    }
}

/// Re-types a raw override string against the value it replaces.
fn parse_override(current: &toml::Value, raw: &str) -> Result<toml::Value, String> {
    use toml::Value;
    let raw = raw.trim();
    match current {
        Value::String(_) => Ok(Value::String(raw.to_string())),
        Value::Integer(_) => raw
            .parse::<i64>()
            .map(Value::Integer)
            .map_err(|e| format!("expected integer, got '{raw}': {e}")),
        Value::Float(_) => raw
            .parse::<f64>()
            .map(Value::Float)
            .map_err(|e| format!("expected float, got '{raw}': {e}")),
        Value::Boolean(_) => raw
            .parse::<bool>()
            .map(Value::Boolean)
            .map_err(|e| format!("expected bool, got '{raw}': {e}")),
        Value::Array(current_items) => {
            let template = current_items.first();
            let items: Result<Vec<Value>, String> = raw
                .split(',')
                .map(|p| p.trim())
                .filter(|p| !p.is_empty())
                .map(|p| match template {
                    Some(Value::Integer(_)) => p
                        .parse::<i64>()
                        .map(Value::Integer)
                        .map_err(|e| format!("expected integer list entry '{p}': {e}")),
                    Some(Value::Float(_)) => p
                        .parse::<f64>()
                        .map(Value::Float)
                        .map_err(|e| format!("expected float list entry '{p}': {e}")),
                    Some(Value::String(_)) | None => Ok(Value::String(p.to_string())),
                    Some(other) => Err(format!(
                        "cannot override list of {} from the environment",
                        other.type_str()
                    )),
                })
                .collect();
            Ok(Value::Array(items?))
        }
        other => Err(format!(
            "cannot override a {} value from the environment",
            other.type_str()
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
        ExperimentConfig::quick().validate().unwrap();
        ExperimentConfig::full().validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_preserves_the_configuration() {
        let cfg = ExperimentConfig::quick();
        let text = cfg.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(
            serde_json::to_string(&cfg).unwrap(),
            serde_json::to_string(&back).unwrap()
        );
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("experiment.toml");
        let cfg = ExperimentConfig::full();
        cfg.save(&path).unwrap();
        let back = ExperimentConfig::load(&path).unwrap();
        assert_eq!(back.run.runs, 300);
    }

    #[test]
    fn overrides_retype_against_existing_fields() {
        let mut cfg = ExperimentConfig::default();
        let vars = vec![
            ("MVFC_RUN_RUNS".to_string(), "7".to_string()),
            ("MVFC_ATTACK_COORDINATION".to_string(), "0.95".to_string()),
            ("MVFC_RUN_OUT_DIR".to_string(), "elsewhere".to_string()),
            ("MVFC_COUNTS_ATTACKERS".to_string(), "4".to_string()),
            (
                "MVFC_RUN_SHOCKS".to_string(),
                "normal, black_thursday".to_string(),
            ),
            (
                "MVFC_CONTROLLER_FAIL_STRESS_SIMS".to_string(),
                "true".to_string(),
            ),
        ];
        let applied = cfg.apply_overrides(&vars).unwrap();
        assert_eq!(applied.len(), 6);
        assert_eq!(cfg.run.runs, 7);
        assert_eq!(cfg.attack.coordination, 0.95);
        assert_eq!(cfg.run.out_dir, "elsewhere");
        assert_eq!(cfg.counts.attackers, 4);
        assert_eq!(
            cfg.run.shocks,
            vec![ShockKind::Normal, ShockKind::BlackThursday]
        );
        assert!(cfg.controller.fail_stress_sims);
    }

    #[test]
    fn unknown_override_fields_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        let vars = vec![("MVFC_RUN_BOGUS".to_string(), "1".to_string())];
        let err = cfg.apply_overrides(&vars).unwrap_err();
        assert!(matches!(err, ConfigError::Override { .. }), "{err}");
        let vars = vec![("MVFC_NOWHERE_X".to_string(), "1".to_string())];
        assert!(cfg.apply_overrides(&vars).is_err());
    }

    #[test]
    fn bad_typed_override_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        let vars = vec![("MVFC_RUN_RUNS".to_string(), "many".to_string())];
        assert!(cfg.apply_overrides(&vars).is_err());
    }

    #[test]
    fn mismatched_stress_window_fails_validation() {
        let mut cfg = ExperimentConfig::default();
        // Valid on its own (injection 6 < horizon 8) but shorter than the
        // 10-step trust window.
        cfg.controller.stress_horizon = 8;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("trust window"), "{err}");
    }
}
