//! Request and response bodies of the HTTP API.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::dialogue::{DialogueSession, OrchestratorAction, Outcome, ReferenceSummary, SessionState, Turn};
use crate::images::ImageRef;
use crate::store::{BoundingBox, EventId, InteractionEvent};
use crate::update::UpdateStatus;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartSession {
    pub image_base64: String,
    pub utterance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PostMessage {
    pub text: String,
}

/// Reply to `POST /sessions` and `POST /sessions/{id}/messages`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub session_id: String,
    pub state: SessionState,
    pub clarification_round: u32,
    #[serde(flatten)]
    pub action: OrchestratorAction,
}

/// Everything the console shows for one session. `version` increases with
/// every committed step and drives the long-poll endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub version: u64,
    pub image_ref: ImageRef,
    pub state: SessionState,
    pub clarification_round: u32,
    pub transcript: Vec<Turn>,
    pub resolved_question: Option<String>,
    pub final_answer: Option<String>,
    pub used_reference: bool,
    pub reference: Option<ReferenceSummary>,
    pub query_bbox: Option<BoundingBox>,
    pub localization_flagged: bool,
    pub correction: Option<String>,
    pub outcome: Option<Outcome>,
    pub event_id: Option<EventId>,
}

impl SessionView {
    pub fn of(s: &DialogueSession, version: u64) -> Self {
        Self {
            session_id: s.session_id.clone(),
            version,
            image_ref: s.image_ref.clone(),
            state: s.state,
            clarification_round: s.clarification_round,
            transcript: s.transcript.clone(),
            resolved_question: s.resolved_question.clone(),
            final_answer: s.final_answer.clone(),
            used_reference: s.used_reference,
            reference: s.retrieval.as_ref().map(ReferenceSummary::from),
            query_bbox: s.query_bbox,
            localization_flagged: s.localization_flagged,
            correction: s.correction.clone(),
            outcome: s.outcome,
            event_id: s.event_id,
        }
    }
}

/// An event without its embedding vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub event_id: EventId,
    pub image_ref: ImageRef,
    pub subject_bbox: BoundingBox,
    pub question: String,
    pub answer: String,
    pub created_at: DateTime<Utc>,
    pub session_id: String,
    pub provider_tag: String,
    pub dim: usize,
    pub localization_flagged: bool,
}

impl From<&InteractionEvent> for EventSummary {
    fn from(e: &InteractionEvent) -> Self {
        Self {
            event_id: e.event_id,
            image_ref: e.image_ref.clone(),
            subject_bbox: e.subject_bbox,
            question: e.question.clone(),
            answer: e.answer.clone(),
            created_at: e.created_at,
            session_id: e.session_id.clone(),
            provider_tag: e.provider_tag.clone(),
            dim: e.e_img.dim(),
            localization_flagged: e.localization_flagged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPage {
    /// Number of events matching the filter, across all pages.
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub events: Vec<EventSummary>,
}

/// Query by precomputed embeddings (`e_img` + `e_text`) or by raw input
/// (`image_base64` + `text`, optional `bbox`) embedded server-side.
/// Thresholds default to the service configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SearchRequest {
    #[serde(default)]
    pub e_img: Option<Vec<f32>>,
    #[serde(default)]
    pub e_text: Option<Vec<f32>>,
    #[serde(default)]
    pub image_base64: Option<String>,
    #[serde(default)]
    pub bbox: Option<BoundingBox>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub tau_img: Option<f64>,
    #[serde(default)]
    pub tau_text: Option<f64>,
    #[serde(default)]
    pub max_candidates: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub event: EventSummary,
    pub sim_img: f64,
    pub sim_text: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub tau_img: f64,
    pub tau_text: f64,
    /// Best match first.
    pub matches: Vec<SearchHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerResponse {
    pub batch_id: String,
    pub record_count: usize,
    pub first_event_id: EventId,
    pub last_event_id: EventId,
    pub job_id: Option<String>,
    /// Set when the batch was exported but the trainer rejected it.
    pub submit_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusResponse {
    #[serde(flatten)]
    pub status: UpdateStatus,
    pub trainer_configured: bool,
    pub trainer_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_version: String,
    pub event_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}
