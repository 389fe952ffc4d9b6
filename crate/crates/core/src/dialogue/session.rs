use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::images::ImageRef;
use crate::store::{BoundingBox, EventId, RetrievalMatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    AwaitingQuery,
    Clarifying,
    Answering,
    AwaitingFeedback,
    Distilling,
    Closed,
}

impl SessionState {
    pub fn can_follow(self, prev: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (prev, self),
            (AwaitingQuery, Clarifying)
                | (Clarifying, Clarifying)
                | (Clarifying, Answering)
                | (Answering, AwaitingFeedback)
                | (AwaitingFeedback, Distilling)
                | (Distilling, Closed)
                | (AwaitingFeedback, Closed)
        )
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned));
        f.write_str(s.as_deref().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Robot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

/// How a session ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// The user confirmed the answer; the event stores it.
    Confirmed,
    /// The user corrected the answer; the event stores the correction.
    Corrected,
    /// Feedback could not be classified; nothing stored.
    Unknown,
    /// Distillation output was unusable; nothing stored.
    Dropped,
}

/// Summary of the retrieved reference shown alongside a final answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub event_id: EventId,
    pub question: String,
    pub answer: String,
    pub sim_img: f64,
    pub sim_text: f64,
    pub image_ref: ImageRef,
    pub subject_bbox: BoundingBox,
}

impl From<&RetrievalMatch> for ReferenceSummary {
    fn from(m: &RetrievalMatch) -> Self {
        Self {
            event_id: m.event.event_id,
            question: m.event.question.clone(),
            answer: m.event.answer.clone(),
            sim_img: m.sim_img,
            sim_text: m.sim_text,
            image_ref: m.event.image_ref.clone(),
            subject_bbox: m.event.subject_bbox,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum OrchestratorAction {
    AskClarification {
        question: String,
    },
    FinalAnswer {
        text: String,
        used_reference: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<ReferenceSummary>,
    },
    SessionClosed {
        outcome: Outcome,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        event_id: Option<EventId>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub session_id: String,
    pub image_ref: ImageRef,
    pub transcript: Vec<Turn>,
    pub state: SessionState,
    pub clarification_round: u32,
    pub resolved_question: Option<String>,
    /// Subject region used for the query-time crop.
    pub query_bbox: Option<BoundingBox>,
    pub localization_flagged: bool,
    pub retrieval: Option<RetrievalMatch>,
    pub final_answer: Option<String>,
    pub used_reference: bool,
    pub correction: Option<String>,
    pub correct_answer: Option<String>,
    pub outcome: Option<Outcome>,
    pub event_id: Option<EventId>,
    /// Every state the session has been in, in order.
    pub state_history: Vec<SessionState>,
}

impl DialogueSession {
    pub fn new(session_id: String, image_ref: ImageRef) -> Self {
        Self {
            session_id,
            image_ref,
            transcript: Vec::new(),
            state: SessionState::AwaitingQuery,
            clarification_round: 0,
            resolved_question: None,
            query_bbox: None,
            localization_flagged: false,
            retrieval: None,
            final_answer: None,
            used_reference: false,
            correction: None,
            correct_answer: None,
            outcome: None,
            event_id: None,
            state_history: vec![SessionState::AwaitingQuery],
        }
    }

    pub(crate) fn set_state(&mut self, next: SessionState) {
        debug_assert!(next.can_follow(self.state), "{} -> {}", self.state, next);
        self.state = next;
        self.state_history.push(next);
    }

    /// A turn stamped no earlier than the previous one.
    pub(crate) fn make_turn(&self, speaker: Speaker, text: &str) -> Turn {
        let now = Utc::now();
        let floor = self.transcript.last().map_or(now, |t| t.timestamp);
        Turn { speaker, text: text.to_owned(), timestamp: now.max(floor) }
    }

    pub(crate) fn push(&mut self, speaker: Speaker, text: &str) {
        let t = self.make_turn(speaker, text);
        self.transcript.push(t);
    }

    pub fn render_transcript(turns: &[Turn]) -> String {
        turns
            .iter()
            .map(|t| match t.speaker {
                Speaker::User => format!("User: {}", t.text),
                Speaker::Robot => format!("Robot: {}", t.text),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn transcript_text(&self) -> String {
        Self::render_transcript(&self.transcript)
    }
}
