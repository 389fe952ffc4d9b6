//! Serve any in-process provider pair over the provider wire protocol.
//!
//! Used to stand up a mock inference server for integration tests and local
//! development (`cargo run --example mock_model_server`).

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use base64::Engine;

use super::http::{ChatBody, EmbedTextBody, TextBody, ValuesBody};
use super::{ChatProvider, ChatRequest, EmbeddingProvider};
use crate::images::ImageStore;

#[derive(Clone)]
struct ProviderState {
    embedder: Arc<dyn EmbeddingProvider>,
    chat: Arc<dyn ChatProvider>,
    images: Arc<ImageStore>,
}

type Failure = (StatusCode, String);

fn fail(e: crate::Error) -> Failure {
    (StatusCode::BAD_GATEWAY, e.to_string())
}

pub fn router(
    embedder: Arc<dyn EmbeddingProvider>,
    chat: Arc<dyn ChatProvider>,
    images: Arc<ImageStore>,
) -> Router {
    Router::new()
        .route("/embed/text", post(embed_text))
        .route("/embed/image", post(embed_image))
        .route("/chat", post(chat_handler))
        .with_state(ProviderState { embedder, chat, images })
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> crate::Result<T> + Send + 'static,
) -> Result<T, Failure> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(fail)
}

async fn embed_text(
    State(s): State<ProviderState>,
    Json(body): Json<EmbedTextBody>,
) -> Result<Json<ValuesBody>, Failure> {
    let values = blocking(move || s.embedder.embed_text(&body.text)).await?;
    Ok(Json(ValuesBody { values }))
}

async fn embed_image(
    State(s): State<ProviderState>,
    body: Bytes,
) -> Result<Json<ValuesBody>, Failure> {
    let values = blocking(move || s.embedder.embed_image(&body)).await?;
    Ok(Json(ValuesBody { values }))
}

async fn chat_handler(
    State(s): State<ProviderState>,
    Json(body): Json<ChatBody>,
) -> Result<Json<TextBody>, Failure> {
    let text = blocking(move || {
        let engine = base64::engine::general_purpose::STANDARD;
        let mut images = Vec::with_capacity(body.images.len());
        for encoded in &body.images {
            let bytes = engine
                .decode(encoded)
                .map_err(|e| crate::Error::BadRequest(format!("image is not base64: {e}")))?;
            images.push(s.images.put(&bytes)?);
        }
        let request = ChatRequest {
            messages: body.messages,
            images,
            template_id: body.template_id,
            model: body.model,
            bindings: Default::default(),
        };
        s.chat.complete(&request)
    })
    .await?;
    Ok(Json(TextBody { text }))
}
