//! JSON-over-HTTP provider clients.
//!
//! ```text
//! POST /embed/text   {"text": "..."}                     -> {"values": [..]}
//! POST /embed/image  <image bytes>, content-type image/* -> {"values": [..]}
//! POST /chat         {"model", "template_id", "messages": [{role, text}],
//!                     "images": [base64, ..]}            -> {"text": "..."}
//! ```

use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ChatMessage, ChatProvider, ChatRequest, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::images::ImageStore;

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct EmbedTextBody {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ValuesBody {
    pub values: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ChatBody {
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub template_id: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub images: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct TextBody {
    pub text: String,
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into()
}

fn map_err(err: ureq::Error, timeout: Duration) -> Error {
    match err {
        ureq::Error::Timeout(_) => Error::Timeout(timeout),
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => Error::Timeout(timeout),
        other => Error::ProviderUnreachable(other.to_string()),
    }
}

fn join(base: &str, path: &str) -> String {
    format!("{}{}", base.trim_end_matches('/'), path)
}

pub struct HttpEmbedder {
    endpoint: String,
    dim: usize,
    tag: String,
    timeout: Duration,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, dim: usize, tag: impl Into<String>, timeout: Duration) -> Self {
        Self { endpoint: endpoint.into(), dim, tag: tag.into(), timeout, agent: agent(timeout) }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        let mut resp = self
            .agent
            .post(join(&self.endpoint, "/embed/text"))
            .send_json(EmbedTextBody { text: text.to_owned() })
            .map_err(|e| map_err(e, self.timeout))?;
        let body: ValuesBody = resp.body_mut().read_json().map_err(|e| map_err(e, self.timeout))?;
        Ok(body.values)
    }

    fn embed_image(&self, image: &[u8]) -> Result<Vec<f32>> {
        let mime = image::guess_format(image)
            .map(|f| f.to_mime_type())
            .unwrap_or("application/octet-stream");
        let mut resp = self
            .agent
            .post(join(&self.endpoint, "/embed/image"))
            .header("content-type", mime)
            .send(image)
            .map_err(|e| map_err(e, self.timeout))?;
        let body: ValuesBody = resp.body_mut().read_json().map_err(|e| map_err(e, self.timeout))?;
        Ok(body.values)
    }
}

pub struct HttpChat {
    endpoint: String,
    timeout: Duration,
    images: Arc<ImageStore>,
    agent: ureq::Agent,
}

impl HttpChat {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, images: Arc<ImageStore>) -> Self {
        Self { endpoint: endpoint.into(), timeout, images, agent: agent(timeout) }
    }
}

impl ChatProvider for HttpChat {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let engine = base64::engine::general_purpose::STANDARD;
        let images = request
            .images
            .iter()
            .map(|r| self.images.get(r).map(|b| engine.encode(b)))
            .collect::<Result<Vec<_>>>()?;
        let body = ChatBody {
            model: request.model.clone(),
            template_id: request.template_id.clone(),
            messages: request.messages.clone(),
            images,
        };
        let mut resp = self
            .agent
            .post(join(&self.endpoint, "/chat"))
            .send_json(body)
            .map_err(|e| map_err(e, self.timeout))?;
        let body: TextBody = resp.body_mut().read_json().map_err(|e| map_err(e, self.timeout))?;
        Ok(body.text)
    }
}
