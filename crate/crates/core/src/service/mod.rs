//! HTTP surface.
//!
//! | method | path                       | body / query                         | reply            |
//! |--------|----------------------------|--------------------------------------|------------------|
//! | POST   | `/sessions`                | [`StartSession`]                     | [`StepResponse`] |
//! | POST   | `/sessions/{id}/messages`  | [`PostMessage`]                      | [`StepResponse`] |
//! | GET    | `/sessions/{id}`           |                                      | [`SessionView`]  |
//! | GET    | `/sessions/{id}/poll`      | `?after=<version>&timeout_ms=<ms>`   | [`SessionView`]  |
//! | GET    | `/events`                  | `?offset=&limit=&flagged=`           | [`EventPage`]    |
//! | GET    | `/events/{id}`             |                                      | `InteractionEvent` with embeddings |
//! | POST   | `/events/search`           | [`SearchRequest`]                    | [`SearchResponse`] |
//! | GET    | `/images/{ref}`            |                                      | image bytes      |
//! | POST   | `/update/trigger`          |                                      | [`TriggerResponse`] |
//! | GET    | `/update/status`           |                                      | [`StatusResponse`] |
//! | GET    | `/healthz`                 |                                      | [`Health`]       |
//!
//! Errors reply `{"error": {"code": "...", "message": "..."}}` where `code`
//! is [`Error::code`]. A message sent to a session that is still processing
//! the previous one gets 409 `session_busy`.

pub mod wire;

use std::collections::HashMap;
use std::future::Future;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::Deserialize;
use tokio::sync::watch;

use crate::app::App;
use crate::config::ServiceConfig;
use crate::dialogue::{DialogueSession, OrchestratorAction, SessionState};
use crate::error::{Error, Result};
use crate::images::{self, ImageRef};
use crate::store::{BoundingBox, EventId, InteractionEvent, RetrievalConfig};
use crate::gateway::Embedding;
pub use wire::*;

const BODY_LIMIT: usize = 32 * 1024 * 1024;
const MAX_POLL: Duration = Duration::from_secs(60);

pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

pub fn status_of(e: &Error) -> StatusCode {
    use Error::*;
    match e {
        NotFound(_) => StatusCode::NOT_FOUND,
        EmptyInput(_) | DimensionMismatch { .. } | UndecodableImage(_) | ZeroVector | InvalidEmbedding(_)
        | InvalidBoundingBox(_) | InvalidEvent(_) | DegenerateCrop { .. } | BadRequest(_) => StatusCode::BAD_REQUEST,
        InvalidState { .. } | SessionBusy | ThresholdNotReached { .. } | JobPending(_) => StatusCode::CONFLICT,
        ProviderUnreachable(_) | ProviderRefusal | ParseFailure(_) | TrainerUnreachable(_) | JobFailed(_) => {
            StatusCode::BAD_GATEWAY
        }
        Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
        StorageFailure(_) | ConfigInvalid { .. } | ScriptInvalid(_) | BindFailure(_) => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_of(&self.0);
        if status.is_server_error() {
            tracing::warn!(error = %self.0, "request failed");
        }
        let body = ErrorBody { error: ErrorDetail { code: self.0.code().into(), message: self.0.to_string() } };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

struct Slot {
    session: Arc<tokio::sync::Mutex<DialogueSession>>,
    view: watch::Sender<SessionView>,
}

#[derive(Clone)]
pub struct ServiceState {
    app: Arc<App>,
    sessions: Arc<Mutex<HashMap<String, Arc<Slot>>>>,
}

impl ServiceState {
    pub fn new(app: Arc<App>) -> Self {
        Self { app, sessions: Arc::default() }
    }

    pub fn app(&self) -> &Arc<App> {
        &self.app
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>> {
        self.sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session {id}")))
    }
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/sessions", post(start_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/poll", get(poll_session))
        .route("/events", get(list_events))
        .route("/events/search", post(search_events))
        .route("/events/{id}", get(get_event))
        .route("/images/{image_ref}", get(get_image))
        .route("/update/trigger", post(trigger_update))
        .route("/update/status", get(update_status))
        .route("/healthz", get(healthz))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(ServiceState::new(app))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Error::StorageFailure(format!("worker panicked: {e}")))?
        .map_err(ApiError)
}

fn decode_base64(field: &str, s: &str) -> Result<Vec<u8>> {
    base64::engine::general_purpose::STANDARD
        .decode(s.trim())
        .map_err(|e| Error::BadRequest(format!("{field}: {e}")))
}

/// Once a stored event pushes the backlog over the threshold, export and,
/// with a trainer configured, submit. Failures are logged, never surfaced to
/// the dialogue that happened to trigger them.
fn auto_update(app: &App) {
    if !app.config.update.auto || !app.update.check_trigger() {
        return;
    }
    match app.update.export_training_batch() {
        Ok(batch) => {
            tracing::info!(batch = %batch.manifest.batch_id, records = batch.manifest.record_count, "exported training batch");
            if app.update.has_trainer() {
                match app.update.submit_update(&batch) {
                    Ok(job) => tracing::info!(job, "submitted update"),
                    Err(e) => tracing::warn!(error = %e, "update submission failed"),
                }
            }
        }
        Err(Error::ThresholdNotReached { .. }) => {}
        Err(e) => tracing::warn!(error = %e, "automatic export failed"),
    }
}

fn advance(app: &App, session: &mut DialogueSession, text: &str) -> Result<OrchestratorAction> {
    let action = match session.state {
        // a previous distillation attempt failed at the provider; any message retries it
        SessionState::Distilling => app.orchestrator.resume_distillation(session)?,
        _ => app.orchestrator.step(session, text)?,
    };
    if let OrchestratorAction::SessionClosed { event_id: Some(_), .. } = action {
        auto_update(app);
    }
    Ok(action)
}

fn publish(slot: &Slot, session: &DialogueSession) {
    slot.view.send_modify(|v| *v = SessionView::of(session, v.version + 1));
}

fn respond(session: &DialogueSession, action: OrchestratorAction) -> StepResponse {
    StepResponse {
        session_id: session.session_id.clone(),
        state: session.state,
        clarification_round: session.clarification_round,
        action,
    }
}

async fn start_session(State(st): State<ServiceState>, Json(req): Json<StartSession>) -> ApiResult<Json<StepResponse>> {
    if req.utterance.trim().is_empty() {
        return Err(Error::EmptyInput("utterance").into());
    }
    let bytes = decode_base64("image_base64", &req.image_base64)?;
    if let Some(id) = &req.session_id {
        if id.trim().is_empty() {
            return Err(Error::EmptyInput("session_id").into());
        }
        if st.slot(id).is_ok() {
            return Err(Error::InvalidState { expected: "unused session id", actual: format!("session {id} exists") }.into());
        }
    }
    let app = st.app.clone();
    let requested = req.session_id.clone();
    let session = blocking(move || app.orchestrator.create_session(requested, &bytes)).await?;
    let id = session.session_id.clone();
    let view = SessionView::of(&session, 0);
    let mutex = Arc::new(tokio::sync::Mutex::new(session));
    let guard = mutex.clone().try_lock_owned().expect("fresh mutex");
    let slot = Arc::new(Slot { session: mutex, view: watch::Sender::new(view) });
    {
        let mut map = st.sessions.lock().unwrap_or_else(|e| e.into_inner());
        if map.contains_key(&id) {
            return Err(Error::InvalidState { expected: "unused session id", actual: format!("session {id} exists") }.into());
        }
        map.insert(id, slot.clone());
    }
    let app = st.app.clone();
    let out = blocking(move || {
        let mut session = guard;
        let action = advance(&app, &mut session, &req.utterance)?;
        publish(&slot, &session);
        Ok(respond(&session, action))
    })
    .await?;
    Ok(Json(out))
}

async fn post_message(
    State(st): State<ServiceState>,
    Path(id): Path<String>,
    Json(msg): Json<PostMessage>,
) -> ApiResult<Json<StepResponse>> {
    let slot = st.slot(&id)?;
    let guard = slot.session.clone().try_lock_owned().map_err(|_| Error::SessionBusy)?;
    let app = st.app.clone();
    let out = blocking(move || {
        let mut session = guard;
        let action = advance(&app, &mut session, &msg.text)?;
        publish(&slot, &session);
        Ok(respond(&session, action))
    })
    .await?;
    Ok(Json(out))
}

async fn get_session(State(st): State<ServiceState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let slot = st.slot(&id)?;
    let view = slot.view.borrow().clone();
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
struct PollQuery {
    #[serde(default)]
    after: u64,
    #[serde(default = "default_poll_ms")]
    timeout_ms: u64,
}

fn default_poll_ms() -> u64 {
    25_000
}

/// Long-poll: reply as soon as the session's version exceeds `after`, or
/// with the unchanged view once `timeout_ms` passes.
async fn poll_session(
    State(st): State<ServiceState>,
    Path(id): Path<String>,
    Query(q): Query<PollQuery>,
) -> ApiResult<Json<SessionView>> {
    let slot = st.slot(&id)?;
    let mut rx = slot.view.subscribe();
    drop(slot);
    let wait = Duration::from_millis(q.timeout_ms).min(MAX_POLL);
    let _ = tokio::time::timeout(wait, rx.wait_for(|v| v.version > q.after)).await;
    let view = rx.borrow().clone();
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    #[serde(default)]
    offset: usize,
    #[serde(default = "default_limit")]
    limit: usize,
    #[serde(default)]
    flagged: Option<bool>,
}

fn default_limit() -> usize {
    50
}

async fn list_events(State(st): State<ServiceState>, Query(q): Query<ListQuery>) -> ApiResult<Json<EventPage>> {
    let limit = q.limit.min(1000);
    let page = match q.flagged {
        None => {
            let events = st.app.store.list_events(q.offset, limit);
            EventPage { total: st.app.store.count(), offset: q.offset, limit, events: events.iter().map(EventSummary::from).collect() }
        }
        Some(flag) => {
            let all: Vec<InteractionEvent> =
                st.app.store.events_after(None).into_iter().filter(|e| e.localization_flagged == flag).collect();
            let events = all.iter().skip(q.offset).take(limit).map(EventSummary::from).collect();
            EventPage { total: all.len(), offset: q.offset, limit, events }
        }
    };
    Ok(Json(page))
}

async fn get_event(State(st): State<ServiceState>, Path(id): Path<String>) -> ApiResult<Json<InteractionEvent>> {
    let id: EventId = id.parse()?;
    Ok(Json(st.app.store.get_event(id)?))
}

fn search(app: &App, req: SearchRequest) -> Result<SearchResponse> {
    let defaults = app.config.retrieval;
    let cfg = RetrievalConfig {
        tau_img: req.tau_img.unwrap_or(defaults.tau_img),
        tau_text: req.tau_text.unwrap_or(defaults.tau_text),
        max_candidates: req.max_candidates.unwrap_or(defaults.max_candidates),
    };
    cfg.validate().map_err(|e| Error::BadRequest(e.to_string()))?;
    let tag = app.gateway.embedder().tag().to_owned();
    let (q_img, q_text) = match (req.e_img, req.e_text, req.image_base64, req.text) {
        (Some(i), Some(t), None, None) => (Embedding::normalized(i, tag.clone())?, Embedding::normalized(t, tag)?),
        (None, None, Some(img), Some(text)) => {
            let image = images::decode(&decode_base64("image_base64", &img)?)?;
            let bbox = req.bbox.unwrap_or(BoundingBox::FULL);
            bbox.validate(app.config.dialogue.min_bbox_area)?;
            (crate::distill::embed_subject(&app.gateway, &image, &bbox)?, app.gateway.embed_text(&text)?)
        }
        _ => {
            return Err(Error::BadRequest(
                "give either `e_img` and `e_text`, or `image_base64` and `text`".into(),
            ))
        }
    };
    let matches = app
        .store
        .search(&q_img, &q_text, &cfg)?
        .into_iter()
        .map(|m| SearchHit { event: EventSummary::from(&m.event), sim_img: m.sim_img, sim_text: m.sim_text })
        .collect();
    Ok(SearchResponse { tau_img: cfg.tau_img, tau_text: cfg.tau_text, matches })
}

async fn search_events(State(st): State<ServiceState>, Json(req): Json<SearchRequest>) -> ApiResult<Json<SearchResponse>> {
    let app = st.app.clone();
    Ok(Json(blocking(move || search(&app, req)).await?))
}

async fn get_image(State(st): State<ServiceState>, Path(image_ref): Path<String>) -> ApiResult<Response> {
    let r: ImageRef = image_ref.parse()?;
    let bytes = st.app.images.get(&r)?;
    let mime = match r.as_str().rsplit('.').next() {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn trigger_update(State(st): State<ServiceState>) -> ApiResult<Json<TriggerResponse>> {
    let app = st.app.clone();
    let out = blocking(move || {
        let batch = app.update.export_training_batch()?;
        let m = &batch.manifest;
        let mut resp = TriggerResponse {
            batch_id: m.batch_id.clone(),
            record_count: m.record_count,
            first_event_id: m.first_event_id,
            last_event_id: m.last_event_id,
            job_id: None,
            submit_error: None,
        };
        if app.update.has_trainer() {
            match app.update.submit_update(&batch) {
                Ok(job) => resp.job_id = Some(job),
                Err(e) => resp.submit_error = Some(e.to_string()),
            }
        }
        Ok(resp)
    })
    .await?;
    Ok(Json(out))
}

async fn update_status(State(st): State<ServiceState>) -> ApiResult<Json<StatusResponse>> {
    let app = st.app.clone();
    let out = blocking(move || {
        let trainer_error = match app.update.refresh() {
            Ok(_) => None,
            Err(e) => Some(e.to_string()),
        };
        Ok(StatusResponse { status: app.update.status(), trainer_configured: app.update.has_trainer(), trainer_error })
    })
    .await?;
    Ok(Json(out))
}

async fn healthz(State(st): State<ServiceState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model_version: st.app.gateway.model_version(),
        event_count: st.app.store.count(),
    })
}

/// Serve until `shutdown` resolves, then flush the store.
pub async fn serve(app: Arc<App>, listener: tokio::net::TcpListener, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<()> {
    let router = router(app.clone());
    axum::serve(listener, router)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| Error::StorageFailure(format!("server error: {e}")))?;
    app.store.flush()?;
    tracing::info!("store flushed; shutting down");
    Ok(())
}

/// Build the application from `config`, bind, and serve until Ctrl-C.
pub async fn run(config: ServiceConfig) -> Result<()> {
    let listen = config.listen.clone();
    let app = Arc::new(tokio::task::spawn_blocking(move || App::build(config)).await.map_err(|e| Error::StorageFailure(e.to_string()))??);
    let listener = tokio::net::TcpListener::bind(&listen)
        .await
        .map_err(|e| Error::BindFailure(format!("{listen}: {e}")))?;
    tracing::info!(addr = %listen, events = app.store.count(), "listening");
    serve(app, listener, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
