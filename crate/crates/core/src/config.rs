//! Service configuration: one TOML file, every key overridable through
//! `INTERLEARN_`-prefixed environment variables with `__` between levels
//! (`INTERLEARN_RETRIEVAL__TAU_IMG=0.85`).

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use figment::providers::{Format, Serialized, Toml};
use figment::Figment;
use serde::{Deserialize, Serialize};

use crate::dialogue::{DialogueConfig, DEFAULT_MAX_CLARIFICATION_ROUNDS};
use crate::error::{Error, Result};
use crate::store::{RetrievalConfig, DEFAULT_MIN_BBOX_AREA};
use crate::update::DEFAULT_UPDATE_THRESHOLD;

pub const ENV_PREFIX: &str = "INTERLEARN_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSection {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub dim: usize,
    /// Identifies the embedding model; defaults to a name derived from the kind.
    pub tag: Option<String>,
    pub timeout_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSection {
    pub kind: ProviderKind,
    pub endpoint: String,
    /// Initial model version tag.
    pub model: String,
    /// Scripted reply rules for the mock provider.
    pub rules_file: Option<PathBuf>,
    pub timeout_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueSection {
    pub max_clarification_rounds: u32,
    pub templates_dir: Option<PathBuf>,
    pub min_bbox_area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerKind {
    None,
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateSection {
    pub threshold: usize,
    pub trainer: TrainerKind,
    pub trainer_endpoint: String,
    /// Export and submit automatically when the threshold is reached.
    pub auto: bool,
    pub timeout_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSection {
    pub data_dir: PathBuf,
    /// fsync the event log after every append.
    pub sync: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub listen: String,
    pub embedding: EmbeddingSection,
    pub chat: ChatSection,
    pub retrieval: RetrievalConfig,
    pub dialogue: DialogueSection,
    pub update: UpdateSection,
    pub storage: StorageSection,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            embedding: EmbeddingSection {
                kind: ProviderKind::Mock,
                endpoint: String::new(),
                dim: 576,
                tag: None,
                timeout_secs: 30.0,
            },
            chat: ChatSection {
                kind: ProviderKind::Mock,
                endpoint: String::new(),
                model: "base".into(),
                rules_file: None,
                timeout_secs: 30.0,
            },
            retrieval: RetrievalConfig::default(),
            dialogue: DialogueSection {
                max_clarification_rounds: DEFAULT_MAX_CLARIFICATION_ROUNDS,
                templates_dir: None,
                min_bbox_area: DEFAULT_MIN_BBOX_AREA,
            },
            update: UpdateSection {
                threshold: DEFAULT_UPDATE_THRESHOLD,
                trainer: TrainerKind::None,
                trainer_endpoint: String::new(),
                auto: true,
                timeout_secs: 30.0,
            },
            storage: StorageSection { data_dir: PathBuf::from("data"), sync: true },
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::ConfigInvalid { field: field.into(), reason: reason.into() }
}

fn timeout(field: &str, secs: f64) -> Result<Duration> {
    Duration::try_from_secs_f64(secs)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| invalid(field, format!("{secs} is not a positive number of seconds")))
}

impl ServiceConfig {
    /// Defaults, then the file (if given), then the environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        Self::load_with_env(path, std::env::vars())
    }

    pub fn load_with_env(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut fig = Figment::from(Serialized::defaults(ServiceConfig::default()));
        if let Some(p) = path {
            if !p.is_file() {
                return Err(invalid("config", format!("{} does not exist", p.display())));
            }
            fig = fig.merge(Toml::file(p));
        }
        // environment passed in explicitly so callers (and tests) control the source
        let overrides: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_ascii_lowercase(), v)))
            .collect();
        for (key, value) in overrides {
            let dotted = key.replace("__", ".");
            fig = fig.merge(Serialized::default(&dotted, parse_env_value(&value)));
        }
        let cfg: ServiceConfig = fig.extract().map_err(|e| {
            let field = e.path.join(".");
            invalid(if field.is_empty() { "config" } else { &field }, e.kind.to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.listen
            .parse::<SocketAddr>()
            .map_err(|e| invalid("listen", format!("`{}`: {e}", self.listen)))?;
        if self.embedding.dim == 0 {
            return Err(invalid("embedding.dim", "must be at least 1"));
        }
        if self.embedding.kind == ProviderKind::Http && self.embedding.endpoint.is_empty() {
            return Err(invalid("embedding.endpoint", "required when kind = \"http\""));
        }
        if self.chat.kind == ProviderKind::Http && self.chat.endpoint.is_empty() {
            return Err(invalid("chat.endpoint", "required when kind = \"http\""));
        }
        if self.chat.model.trim().is_empty() {
            return Err(invalid("chat.model", "must not be empty"));
        }
        if let Some(rules) = &self.chat.rules_file {
            if !rules.is_file() {
                return Err(invalid("chat.rules_file", format!("{} does not exist", rules.display())));
            }
        }
        timeout("embedding.timeout_secs", self.embedding.timeout_secs)?;
        timeout("chat.timeout_secs", self.chat.timeout_secs)?;
        timeout("update.timeout_secs", self.update.timeout_secs)?;
        self.retrieval.validate()?;
        if !(0.0..1.0).contains(&self.dialogue.min_bbox_area) {
            return Err(invalid("dialogue.min_bbox_area", "must be in [0, 1)"));
        }
        if self.update.threshold == 0 {
            return Err(invalid("update.threshold", "must be at least 1"));
        }
        if self.update.trainer == TrainerKind::Http && self.update.trainer_endpoint.is_empty() {
            return Err(invalid("update.trainer_endpoint", "required when trainer = \"http\""));
        }
        std::fs::create_dir_all(&self.storage.data_dir)
            .map_err(|e| invalid("storage.data_dir", format!("{}: {e}", self.storage.data_dir.display())))?;
        Ok(())
    }

    pub fn dialogue_config(&self) -> DialogueConfig {
        DialogueConfig {
            max_clarification_rounds: self.dialogue.max_clarification_rounds,
            retrieval: self.retrieval,
            retrieval_enabled: true,
            min_bbox_area: self.dialogue.min_bbox_area,
        }
    }

    pub fn embedding_timeout(&self) -> Duration {
        timeout("", self.embedding.timeout_secs).unwrap_or(crate::gateway::DEFAULT_TIMEOUT)
    }

    pub fn chat_timeout(&self) -> Duration {
        timeout("", self.chat.timeout_secs).unwrap_or(crate::gateway::DEFAULT_TIMEOUT)
    }

    pub fn trainer_timeout(&self) -> Duration {
        timeout("", self.update.timeout_secs).unwrap_or(crate::gateway::DEFAULT_TIMEOUT)
    }
}

/// Interpret an environment value as TOML when it parses as a scalar,
/// otherwise as a plain string.
fn parse_env_value(raw: &str) -> figment::value::Value {
    use figment::value::Value;
    let trimmed = raw.trim();
    if let Ok(b) = trimmed.parse::<bool>() {
        return Value::from(b);
    }
    if let Ok(i) = trimmed.parse::<i64>() {
        return Value::from(i);
    }
    if let Ok(f) = trimmed.parse::<f64>() {
        return Value::from(f);
    }
    Value::from(raw.to_owned())
}
