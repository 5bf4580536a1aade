//! Engine configuration files and pool construction.
//!
//! One JSON file wires the whole pipeline: named backends (HTTP endpoints
//! or scripted mocks), the triage and consensus stage bindings, the expert
//! registry (inline or by path), and the aggregation knobs. API keys are
//! never stored in config files — each HTTP backend names the environment
//! variable holding its key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{CascadeConfig, DEFAULT_BOOST_SCALE, DEFAULT_RANK_LEVELS};
use crate::backends::{BackendPool, HttpBackend, MockBackend, MockOutcome};
use crate::consensus::{Engine, EngineSettings, StageBinding, WeightsMode};
use crate::experts::PanelOptions;
use crate::triage::ExpertRegistry;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{referrer} references unknown backend {backend_id:?}")]
    UnknownBackendRef {
        referrer: String,
        backend_id: String,
    },
    #[error("no expert registry: set registry_path or an inline registry")]
    MissingRegistry,
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn default_temperature() -> f64 {
    0.2
}

fn default_stage_max_tokens() -> u32 {
    4096
}

fn default_boost_scale() -> f64 {
    DEFAULT_BOOST_SCALE
}

fn default_max_rank() -> usize {
    DEFAULT_RANK_LEVELS
}

fn default_timeout_ms() -> u64 {
    120_000
}

fn default_retry_backoff_ms() -> u64 {
    250
}

/// Backend + model binding for the triage or consensus stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub backend_id: String,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_stage_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub system_prompt: Option<String>,
}

/// One scripted mock reply (or failure). Entries with `match_substring`
/// fire whenever the request contains the substring, first registered
/// wins; entries without it queue up as sequential replies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MockScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_substring: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    Http {
        base_url: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key_env: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_concurrency: Option<usize>,
    },
    Mock {
        #[serde(default)]
        script: Vec<MockScriptEntry>,
    },
}

/// Serialized form of the expert weighting mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightsModeConfig {
    #[default]
    Uniform,
    Specialty(BTreeMap<String, f64>),
}

/// The engine configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub backends: BTreeMap<String, BackendConfig>,
    pub triage: StageConfig,
    pub consensus: StageConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<ExpertRegistry>,
    #[serde(default)]
    pub weights_mode: WeightsModeConfig,
    #[serde(default = "default_boost_scale")]
    pub boost_scale: f64,
    #[serde(default = "default_max_rank")]
    pub max_rank: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retry_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_stage_max_tokens")]
    pub expert_max_tokens: u32,
}

const DEFAULT_TRIAGE_SYSTEM_PROMPT: &str =
    "You are a clinical triage coordinator assembling a panel of specialist physicians.";
const DEFAULT_CONSENSUS_SYSTEM_PROMPT: &str =
    "You are the attending physician synthesizing a specialist panel's input \
     into one final determination.";

impl EngineConfig {
    /// Reads and parses a config file. Relative paths inside the file
    /// (registry, mock reply files) resolve against the file's directory.
    pub fn from_file(path: &Path) -> Result<(Self, PathBuf), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: EngineConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((config, base_dir))
    }

    fn load_registry(&self, base_dir: &Path) -> Result<ExpertRegistry, ConfigError> {
        if let Some(registry) = &self.registry {
            return Ok(registry.clone());
        }
        let rel = self.registry_path.as_ref().ok_or(ConfigError::MissingRegistry)?;
        let path = resolve(base_dir, rel);
        let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path,
            message: e.to_string(),
        })
    }

    fn build_pool(&self, base_dir: &Path) -> Result<BackendPool, ConfigError> {
        let mut pool = BackendPool::new();
        for (id, backend) in &self.backends {
            match backend {
                BackendConfig::Http {
                    base_url,
                    api_key_env,
                    max_concurrency,
                } => {
                    let api_key = match api_key_env {
                        Some(var) => Some(std::env::var(var).map_err(|_| {
                            ConfigError::Invalid(format!(
                                "backend {id:?}: environment variable {var} is not set"
                            ))
                        })?),
                        None => None,
                    };
                    pool.register(
                        id.clone(),
                        Arc::new(HttpBackend::new(base_url.clone(), api_key, *max_concurrency)),
                    );
                }
                BackendConfig::Mock { script } => {
                    let mock = MockBackend::new();
                    for entry in script {
                        let outcome = entry_outcome(id, entry, base_dir)?;
                        let delay = entry.delay_ms.map(Duration::from_millis);
                        match &entry.match_substring {
                            Some(substring) => {
                                mock.script_entry(substring, vec![outcome], delay);
                            }
                            None => mock.script_next_outcome(outcome),
                        }
                    }
                    pool.register(id.clone(), Arc::new(mock));
                }
            }
        }
        Ok(pool)
    }

    fn weights_mode(&self) -> Result<WeightsMode, ConfigError> {
        match &self.weights_mode {
            WeightsModeConfig::Uniform => Ok(WeightsMode::Uniform),
            WeightsModeConfig::Specialty(map) => {
                for (specialty, &w) in map {
                    if !(w > 0.0) || !w.is_finite() {
                        return Err(ConfigError::Invalid(format!(
                            "weight {w} for specialty {specialty:?} must be > 0"
                        )));
                    }
                }
                Ok(WeightsMode::Specialty(map.clone()))
            }
        }
    }

    /// Builds the runnable engine: pool, registry, validated settings.
    pub fn build_engine(&self, base_dir: &Path) -> Result<Engine, ConfigError> {
        let registry = self.load_registry(base_dir)?;
        let pool = self.build_pool(base_dir)?;

        for (referrer, backend_id) in [
            ("triage stage", self.triage.backend_id.as_str()),
            ("consensus stage", self.consensus.backend_id.as_str()),
        ] {
            if !pool.contains(backend_id) {
                return Err(ConfigError::UnknownBackendRef {
                    referrer: referrer.to_string(),
                    backend_id: backend_id.to_string(),
                });
            }
        }
        for backend_id in registry.backend_ids() {
            if !pool.contains(backend_id) {
                return Err(ConfigError::UnknownBackendRef {
                    referrer: "expert registry".to_string(),
                    backend_id: backend_id.to_string(),
                });
            }
        }

        let cascade = CascadeConfig::new(self.max_rank, self.boost_scale)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let settings = EngineSettings {
            triage: stage_binding(&self.triage, DEFAULT_TRIAGE_SYSTEM_PROMPT),
            consensus: stage_binding(&self.consensus, DEFAULT_CONSENSUS_SYSTEM_PROMPT),
            weights_mode: self.weights_mode()?,
            cascade,
            panel: PanelOptions {
                timeout: Duration::from_millis(self.timeout_ms),
                retry_backoff: Duration::from_millis(self.retry_backoff_ms),
                max_tokens: self.expert_max_tokens,
            },
        };
        Ok(Engine::new(settings, registry, Arc::new(pool)))
    }
}

/// Loads a config file and builds the engine in one step.
pub fn load_engine(path: &Path) -> Result<Engine, ConfigError> {
    let (config, base_dir) = EngineConfig::from_file(path)?;
    config.build_engine(&base_dir)
}

fn stage_binding(stage: &StageConfig, default_system_prompt: &str) -> StageBinding {
    StageBinding {
        backend_id: stage.backend_id.clone(),
        model_name: stage.model_name.clone(),
        system_prompt: stage
            .system_prompt
            .clone()
            .unwrap_or_else(|| default_system_prompt.to_string()),
        temperature: stage.temperature,
        max_tokens: stage.max_tokens,
    }
}

fn entry_outcome(
    backend_id: &str,
    entry: &MockScriptEntry,
    base_dir: &Path,
) -> Result<MockOutcome, ConfigError> {
    let set = [
        entry.reply.is_some(),
        entry.reply_file.is_some(),
        entry.fail_status.is_some(),
    ]
    .iter()
    .filter(|&&b| b)
    .count();
    if set != 1 {
        return Err(ConfigError::Invalid(format!(
            "mock backend {backend_id:?}: each script entry needs exactly one of \
             reply, reply_file, fail_status"
        )));
    }
    if let Some(reply) = &entry.reply {
        return Ok(MockOutcome::Reply(reply.clone()));
    }
    if let Some(rel) = &entry.reply_file {
        let path = resolve(base_dir, rel);
        let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
            path,
            source,
        })?;
        return Ok(MockOutcome::Reply(text));
    }
    Ok(MockOutcome::FailStatus(entry.fail_status.expect("checked above")))
}

fn resolve(base_dir: &Path, rel: &Path) -> PathBuf {
    if rel.is_absolute() {
        rel.to_path_buf()
    } else {
        base_dir.join(rel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triage::SPECIALTY_PLACEHOLDER;

    fn minimal_config_json() -> serde_json::Value {
        serde_json::json!({
            "backends": {
                "panel-mock": {"kind": "mock", "script": [
                    {"match_substring": "triage", "reply": "{\"task_type\":\"treatment\",\"specialties\":[\"hematologist\",\"nephrologist\"]}"}
                ]}
            },
            "triage": {"backend_id": "panel-mock", "model_name": "scripted"},
            "consensus": {"backend_id": "panel-mock", "model_name": "scripted"},
            "registry": {
                "default": {
                    "backend_id": "panel-mock",
                    "model_name": "scripted",
                    "system_prompt_template": format!("You are a {SPECIALTY_PLACEHOLDER}."),
                    "temperature": 0.2
                }
            }
        })
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config: EngineConfig = serde_json::from_value(minimal_config_json()).unwrap();
        assert_eq!(config.boost_scale, DEFAULT_BOOST_SCALE);
        assert_eq!(config.max_rank, DEFAULT_RANK_LEVELS);
        assert_eq!(config.timeout_ms, 120_000);
        assert_eq!(config.weights_mode, WeightsModeConfig::Uniform);
        let engine = config.build_engine(Path::new(".")).unwrap();
        assert_eq!(engine.settings().cascade.rank_levels(), 6);
    }

    #[test]
    fn unknown_backend_reference_is_rejected() {
        let mut json = minimal_config_json();
        json["triage"]["backend_id"] = "missing".into();
        let config: EngineConfig = serde_json::from_value(json).unwrap();
        let err = config.build_engine(Path::new(".")).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownBackendRef { .. }));
    }

    #[test]
    fn registry_backend_reference_is_checked() {
        let mut json = minimal_config_json();
        json["registry"]["experts"] = serde_json::json!({
            "cardiologist": {
                "backend_id": "elsewhere",
                "model_name": "x",
                "system_prompt_template": "t",
                "temperature": 0.0
            }
        });
        let config: EngineConfig = serde_json::from_value(json).unwrap();
        let err = config.build_engine(Path::new(".")).unwrap_err();
        match err {
            ConfigError::UnknownBackendRef { backend_id, .. } => {
                assert_eq!(backend_id, "elsewhere")
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_registry_is_an_error() {
        let mut json = minimal_config_json();
        json.as_object_mut().unwrap().remove("registry");
        let config: EngineConfig = serde_json::from_value(json).unwrap();
        assert!(matches!(
            config.build_engine(Path::new(".")),
            Err(ConfigError::MissingRegistry)
        ));
    }

    #[test]
    fn negative_boost_scale_is_rejected() {
        let mut json = minimal_config_json();
        json["boost_scale"] = (-0.5).into();
        let config: EngineConfig = serde_json::from_value(json).unwrap();
        assert!(matches!(
            config.build_engine(Path::new(".")),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn mock_script_entry_needs_exactly_one_outcome() {
        let mut json = minimal_config_json();
        json["backends"]["panel-mock"]["script"] = serde_json::json!([
            {"match_substring": "x", "reply": "a", "fail_status": 500}
        ]);
        let config: EngineConfig = serde_json::from_value(json).unwrap();
        assert!(matches!(
            config.build_engine(Path::new(".")),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn reply_file_resolves_relative_to_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("reply.txt"), "scripted text").unwrap();
        let mut json = minimal_config_json();
        json["backends"]["panel-mock"]["script"] = serde_json::json!([
            {"match_substring": "anything", "reply_file": "reply.txt"}
        ]);
        let config: EngineConfig = serde_json::from_value(json).unwrap();
        let engine = config.build_engine(dir.path()).unwrap();
        assert!(engine.pool().contains("panel-mock"));
    }

    #[test]
    fn missing_api_key_env_is_an_error() {
        let mut json = minimal_config_json();
        json["backends"]["remote"] = serde_json::json!({
            "kind": "http",
            "base_url": "http://127.0.0.1:9",
            "api_key_env": "DEFINITELY_NOT_SET_FOR_TESTS_12345"
        });
        let config: EngineConfig = serde_json::from_value(json).unwrap();
        assert!(matches!(
            config.build_engine(Path::new(".")),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn specialty_weights_must_be_positive() {
        let mut json = minimal_config_json();
        json["weights_mode"] = serde_json::json!({"specialty": {"hematologist": 0.0}});
        let config: EngineConfig = serde_json::from_value(json).unwrap();
        assert!(matches!(
            config.build_engine(Path::new(".")),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn config_round_trips_through_json() {
        let config: EngineConfig = serde_json::from_value(minimal_config_json()).unwrap();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: EngineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn registry_resolution_prefers_inline() {
        let config: EngineConfig = serde_json::from_value(minimal_config_json()).unwrap();
        let registry = config.load_registry(Path::new("/nonexistent")).unwrap();
        assert_eq!(registry.default_config().model_name, "scripted");
    }
}
