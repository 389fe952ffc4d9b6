//! Deterministic in-process providers.

use std::path::Path;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatProvider, ChatRequest, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::images;

/// Embeds by hash projection: the input bytes seed a ChaCha8 stream from
/// which `dim` standard-normal values are drawn. The gateway normalizes.
///
/// Images are hashed over their decoded RGBA pixels, so the same picture in
/// two encodings embeds identically.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    tag: String,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim, tag: format!("mock-hash-{dim}") }
    }

    pub fn with_tag(dim: usize, tag: impl Into<String>) -> Self {
        Self { dim, tag: tag.into() }
    }

    fn project(&self, domain: &[u8], payload: &[u8]) -> Vec<f32> {
        let mut hasher = Sha256::new();
        hasher.update(domain);
        hasher.update(payload);
        let digest = hasher.finalize();
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect()
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        Ok(self.project(b"text\0", text.as_bytes()))
    }

    fn embed_image(&self, image: &[u8]) -> Result<Vec<f32>> {
        let rgba = images::decode(image)?.to_rgba8();
        let mut payload = Vec::with_capacity(8 + rgba.as_raw().len());
        payload.extend_from_slice(&rgba.width().to_le_bytes());
        payload.extend_from_slice(&rgba.height().to_le_bytes());
        payload.extend_from_slice(rgba.as_raw());
        Ok(self.project(b"image\0", &payload))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Template the request must come from; `*` matches any.
    pub template_id: String,
    /// Substring that must occur in the request's message text; empty matches any.
    #[serde(default)]
    pub match_substring: String,
    pub reply: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RulesFile {
    Wrapped { rules: Vec<ScriptRule> },
    Bare(Vec<ScriptRule>),
}

/// Chat mock driven by an ordered rule list; the first matching rule wins.
/// An unmatched request yields an empty completion, which the gateway
/// reports as a refusal.
#[derive(Debug, Default)]
pub struct ScriptedChat {
    rules: Vec<ScriptRule>,
    log: Mutex<Vec<ChatRequest>>,
}

impl ScriptedChat {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self { rules, log: Mutex::default() }
    }

    /// Parse YAML (or JSON) rules: either a bare list or `{rules: [...]}`.
    pub fn from_yaml(text: &str) -> Result<Self> {
        match serde_yaml::from_str::<RulesFile>(text) {
            Ok(RulesFile::Wrapped { rules }) | Ok(RulesFile::Bare(rules)) => Ok(Self::new(rules)),
            Err(e) => Err(Error::ConfigInvalid { field: "chat.rules_file".into(), reason: e.to_string() }),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigInvalid {
            field: "chat.rules_file".into(),
            reason: format!("{}: {e}", path.display()),
        })?;
        Self::from_yaml(&text)
    }

    pub fn rule(mut self, template_id: &str, match_substring: &str, reply: &str) -> Self {
        self.rules.push(ScriptRule {
            template_id: template_id.into(),
            match_substring: match_substring.into(),
            reply: reply.into(),
        });
        self
    }

    /// Requests seen so far, in call order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl ChatProvider for ScriptedChat {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(request.clone());
        let text = request.text();
        let reply = self
            .rules
            .iter()
            .find(|r| {
                (r.template_id == "*" || r.template_id == request.template_id)
                    && text.contains(&r.match_substring)
            })
            .map(|r| r.reply.clone())
            .unwrap_or_default();
        Ok(reply)
    }
}
