//! Uniform access to embedding and chat providers.
//!
//! Providers only produce raw vectors and raw completions. Everything that
//! leaves this module has been validated: embeddings have the advertised
//! dimension, are finite and unit length; completions are non-empty.

mod http;
mod mock;
pub mod server;

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::images::{self, ImageRef, ImageStore};

pub use http::{HttpChat, HttpEmbedder};
pub use mock::{HashEmbedder, ScriptRule, ScriptedChat};

/// Default per-call timeout for network providers.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Tolerance on the L2 norm of an ingested embedding.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
    provider_tag: String,
}

impl Embedding {
    /// Wrap raw values without normalizing them.
    pub fn from_raw(values: Vec<f32>, provider_tag: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidEmbedding("embedding has zero dimensions".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding(format!("non-finite value at index {i}")));
        }
        Ok(Self { values, provider_tag: provider_tag.into() })
    }

    /// Wrap raw values and scale them to unit L2 norm.
    pub fn normalized(values: Vec<f32>, provider_tag: impl Into<String>) -> Result<Self> {
        Self::from_raw(values, provider_tag)?.into_normalized()
    }

    pub fn into_normalized(mut self) -> Result<Self> {
        let norm = self.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        for v in &mut self.values {
            *v = (f64::from(*v) / norm) as f32;
        }
        Ok(self)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn provider_tag(&self) -> &str {
        &self.provider_tag
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= NORM_TOLERANCE
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRepr {
    values: Vec<f32>,
    dim: usize,
    provider_tag: String,
}

impl Serialize for Embedding {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        EmbeddingRepr {
            values: self.values.clone(),
            dim: self.dim(),
            provider_tag: self.provider_tag.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = EmbeddingRepr::deserialize(d)?;
        if repr.dim != repr.values.len() {
            return Err(serde::de::Error::custom(format!(
                "dim {} does not match {} values",
                repr.dim,
                repr.values.len()
            )));
        }
        Embedding::from_raw(repr.values, repr.provider_tag).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self { role, text: text.into() }
    }
}

/// One prompt-driven call to the chat model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub images: Vec<ImageRef>,
    pub template_id: String,
    /// Active model version; stamped by [`Gateway::chat`].
    #[serde(default)]
    pub model: String,
    /// Placeholder values the prompt was rendered from. Not sent over the wire;
    /// in-process mocks use them to react to the request's content.
    #[serde(skip)]
    pub bindings: BTreeMap<String, String>,
}

impl ChatRequest {
    pub fn new(template_id: impl Into<String>) -> Self {
        Self { template_id: template_id.into(), ..Default::default() }
    }

    /// All message text joined by newlines.
    pub fn text(&self) -> String {
        self.messages.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n")
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn tag(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Vec<f32>>;
    fn embed_image(&self, image: &[u8]) -> Result<Vec<f32>>;
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

impl<F> ChatProvider for F
where
    F: Fn(&ChatRequest) -> Result<String> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        self(request)
    }
}

fn ingest(values: Vec<f32>, provider: &dyn EmbeddingProvider) -> Result<Embedding> {
    if values.len() != provider.dim() {
        return Err(Error::DimensionMismatch { expected: provider.dim(), got: values.len() });
    }
    Embedding::normalized(values, provider.tag())
}

pub fn embed_text(text: &str, provider: &dyn EmbeddingProvider) -> Result<Embedding> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput("text"));
    }
    ingest(provider.embed_text(text)?, provider)
}

pub fn embed_image(image: &[u8], provider: &dyn EmbeddingProvider) -> Result<Embedding> {
    images::decode(image)?;
    ingest(provider.embed_image(image)?, provider)
}

/// The configured pair of providers plus the active chat model version.
pub struct Gateway {
    embedder: Arc<dyn EmbeddingProvider>,
    chat: Arc<dyn ChatProvider>,
    images: Arc<ImageStore>,
    model_version: RwLock<String>,
}

impl Gateway {
    pub fn new(
        embedder: Arc<dyn EmbeddingProvider>,
        chat: Arc<dyn ChatProvider>,
        images: Arc<ImageStore>,
        model_version: impl Into<String>,
    ) -> Self {
        Self { embedder, chat, images, model_version: RwLock::new(model_version.into()) }
    }

    pub fn embed_text(&self, text: &str) -> Result<Embedding> {
        embed_text(text, self.embedder.as_ref())
    }

    pub fn embed_image(&self, image: &[u8]) -> Result<Embedding> {
        embed_image(image, self.embedder.as_ref())
    }

    pub fn chat(&self, mut request: ChatRequest) -> Result<String> {
        if request.messages.is_empty() {
            return Err(Error::EmptyInput("chat messages"));
        }
        if let Some(missing) = request.images.iter().find(|r| !self.images.contains(r)) {
            return Err(Error::NotFound(format!("image {missing}")));
        }
        request.model = self.model_version();
        let reply = self.chat.complete(&request)?;
        if reply.trim().is_empty() {
            return Err(Error::ProviderRefusal);
        }
        Ok(reply)
    }

    pub fn embedder(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.embedder
    }

    pub fn images(&self) -> &Arc<ImageStore> {
        &self.images
    }

    pub fn model_version(&self) -> String {
        self.model_version.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn set_model_version(&self, version: impl Into<String>) {
        *self.model_version.write().unwrap_or_else(|e| e.into_inner()) = version.into();
    }
}
