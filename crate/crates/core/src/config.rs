//! Experiment configuration: one TOML file, validated as a whole.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::{FilterConfig, SyntheticConfig};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::fed::FedConfig;
use crate::model::ModelConfig;
use crate::privacy::PrivacyConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Files,
}

fn default_source() -> DataSource {
    DataSource::Synthetic
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_source")]
    pub source: DataSource,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    /// JSON-lines interactions, used when `source = "files"`.
    #[serde(default)]
    pub interactions: Option<PathBuf>,
    #[serde(default)]
    pub filter: FilterConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: default_source(),
            synthetic: SyntheticConfig::default(),
            interactions: None,
            filter: FilterConfig::default(),
        }
    }
}

fn default_negatives() -> usize {
    99
}
fn default_ks() -> Vec<usize> {
    crate::data::DEFAULT_KS.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Sampled negatives per test instance.
    #[serde(default = "default_negatives")]
    pub negatives: usize,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { negatives: default_negatives(), ks: default_ks() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub federation: FedConfig,
    #[serde(default)]
    pub privacy: PrivacyConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the resolved TOML.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    /// Checks every section before anything runs.
    pub fn validate(&self) -> Result<()> {
        if self.data.source == DataSource::Synthetic {
            self.data.synthetic.validate()?;
        } else if self.data.interactions.is_none() {
            return Err(Error::Config("data.interactions is required when data.source = \"files\"".into()));
        }
        self.data.filter.validate()?;
        self.augment.validate()?;
        self.model.validate()?;
        self.federation.validate()?;
        self.privacy.validate()?;
        if self.eval.negatives == 0 || self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config("eval.negatives and eval.ks must be positive".into()));
        }
        Ok(())
    }

    /// Applies a `section.key=value` override, re-parsing the value as TOML
    /// (bare words fall back to strings).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .map(|mut t| t.remove("v").expect("parsed key"))
            .unwrap_or_else(|_| toml::Value::String(raw.trim().to_string()));
        let mut doc: toml::Value = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut doc;
        let parts: Vec<&str> = key.trim().split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = slot
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override key {key} does not name a section")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            slot = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let updated: Self = doc.try_into().map_err(|e: toml::de::Error| Error::Config(format!("override {key}: {e}")))?;
        *self = updated;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_parse() {
        let reference = ExperimentConfig::from_toml_str(include_str!("../../../configs/default.toml")).unwrap();
        assert_eq!(reference, ExperimentConfig::default());
        let smoke = ExperimentConfig::from_toml_str(include_str!("../../../configs/smoke.toml")).unwrap();
        assert!(!smoke.privacy.enabled);
        assert_eq!(smoke.federation.rounds, 50);
    }

    #[test]
    fn empty_file_gives_validated_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.federation.batch_size, 32);
        assert_eq!(cfg.federation.rho, 0.01);
        assert_eq!(cfg.federation.lr, 5e-4);
        assert_eq!(cfg.privacy.epsilon, 1.0);
        assert_eq!(cfg.privacy.decay, 0.997);
        assert_eq!(cfg.augment.candidate_size, 10);
        assert_eq!(cfg.augment.decoding.temperature, 0.4);
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[model]\nbogus = 1\n").unwrap_err().is_config());
        for bad in [
            "[model]\nlambda_idra = 1.5",
            "[model]\ntemperature = 0.0",
            "[federation]\nrho = 0.0",
            "[privacy]\nzeta = 1.0",
            "[data.synthetic]\nsparsity = 1.0",
        ] {
            let err = ExperimentConfig::from_toml_str(bad).unwrap_err();
            assert!(err.is_config(), "{bad}: {err}");
        }
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("federation.rounds=7").unwrap();
        cfg.set("privacy.mode=rdp-convert").unwrap();
        cfg.set("augment.backend=http").unwrap();
        cfg.set("data.synthetic.users=30").unwrap();
        assert_eq!(cfg.federation.rounds, 7);
        assert_eq!(cfg.privacy.mode, crate::privacy::AccountingMode::RdpConvert);
        assert_eq!(cfg.augment.backend, crate::augment::BackendKind::Http);
        assert_eq!(cfg.data.synthetic.users, 30);
        assert!(cfg.set("model.nope=1").is_err());
    }
}
