//! Per-session dialogue state machine.
//!
//! ```text
//! AwaitingQuery -> Clarifying -(ASK)-> Clarifying -(CLEAR | round limit)-> Answering
//!   -> AwaitingFeedback -(confirm | correct)-> Distilling -> Closed
//!                       -(unknown)------------------------> Closed
//! ```
//!
//! Every step that calls a provider computes its result first and commits it
//! to the session only on success, so a failed step can be retried with the
//! same input without duplicating transcript turns.

pub mod protocol;
mod session;
pub mod templates;

use std::collections::BTreeMap;
use std::sync::Arc;

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::distill::{embed_subject, DistillOutcome, Distiller};
use crate::error::{Error, Result};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, Role};
use crate::images;
use crate::store::{BoundingBox, EventStore, RetrievalConfig, RetrievalMatch, DEFAULT_MIN_BBOX_AREA};

use protocol::{ClarifyReply, FeedbackKind};
pub use session::{
    DialogueSession, OrchestratorAction, Outcome, ReferenceSummary, SessionState, Speaker, Turn,
};
use templates::Templates;

pub const DEFAULT_MAX_CLARIFICATION_ROUNDS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DialogueConfig {
    pub max_clarification_rounds: u32,
    pub retrieval: RetrievalConfig,
    /// When false, answers never consult the event store.
    pub retrieval_enabled: bool,
    pub min_bbox_area: f64,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        Self {
            max_clarification_rounds: DEFAULT_MAX_CLARIFICATION_ROUNDS,
            retrieval: RetrievalConfig::default(),
            retrieval_enabled: true,
            min_bbox_area: DEFAULT_MIN_BBOX_AREA,
        }
    }
}

struct Answer {
    bbox: BoundingBox,
    flagged: bool,
    retrieval: Option<RetrievalMatch>,
    text: String,
}

pub struct Orchestrator {
    gateway: Arc<Gateway>,
    store: Arc<EventStore>,
    templates: Arc<Templates>,
    distiller: Distiller,
    config: DialogueConfig,
}

fn invalid(expected: &'static str, s: &DialogueSession) -> Error {
    Error::InvalidState { expected, actual: s.state.to_string() }
}

impl Orchestrator {
    pub fn new(
        gateway: Arc<Gateway>,
        store: Arc<EventStore>,
        templates: Arc<Templates>,
        distiller: Distiller,
        config: DialogueConfig,
    ) -> Self {
        Self { gateway, store, templates, distiller, config }
    }

    pub fn config(&self) -> &DialogueConfig {
        &self.config
    }

    pub fn set_retrieval_enabled(&mut self, enabled: bool) {
        self.config.retrieval_enabled = enabled;
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn store(&self) -> &Arc<EventStore> {
        &self.store
    }

    /// Persist the scene image and open a session waiting for its first query.
    pub fn create_session(&self, session_id: Option<String>, image: &[u8]) -> Result<DialogueSession> {
        let image_ref = self.gateway.images().put(image)?;
        let id = session_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        Ok(DialogueSession::new(id, image_ref))
    }

    pub fn start_session(&self, image: &[u8], first_utterance: &str) -> Result<(DialogueSession, OrchestratorAction)> {
        self.start_session_with_id(None, image, first_utterance)
    }

    pub fn start_session_with_id(
        &self,
        session_id: Option<String>,
        image: &[u8],
        first_utterance: &str,
    ) -> Result<(DialogueSession, OrchestratorAction)> {
        if first_utterance.trim().is_empty() {
            return Err(Error::EmptyInput("utterance"));
        }
        let mut session = self.create_session(session_id, image)?;
        let action = self.step(&mut session, first_utterance)?;
        Ok((session, action))
    }

    /// Feed one user utterance into the session.
    pub fn step(&self, session: &mut DialogueSession, utterance: &str) -> Result<OrchestratorAction> {
        if utterance.trim().is_empty() {
            return Err(Error::EmptyInput("utterance"));
        }
        match session.state {
            SessionState::AwaitingQuery | SessionState::Clarifying => self.clarify(session, utterance),
            SessionState::AwaitingFeedback => self.record_feedback(session, utterance),
            _ => Err(invalid("awaiting_query, clarifying or awaiting_feedback", session)),
        }
    }

    fn request(&self, template: &str, session: &DialogueSession, bindings: BTreeMap<String, String>) -> Result<ChatRequest> {
        let prompt = self.templates.render(template, &bindings)?;
        Ok(ChatRequest {
            messages: vec![ChatMessage::new(Role::User, prompt)],
            images: vec![session.image_ref.clone()],
            template_id: template.to_owned(),
            bindings,
            ..Default::default()
        })
    }

    fn clarify(&self, session: &mut DialogueSession, utterance: &str) -> Result<OrchestratorAction> {
        let user_turn = session.make_turn(Speaker::User, utterance);
        let mut turns = session.transcript.clone();
        turns.push(user_turn.clone());
        let transcript = DialogueSession::render_transcript(&turns);
        let bindings = BTreeMap::from([("transcript".to_owned(), transcript)]);

        let resolved = if session.clarification_round >= self.config.max_clarification_rounds {
            let reply = self.gateway.chat(self.request(templates::FINALIZE, session, bindings)?)?;
            protocol::parse_finalize(&reply)?
        } else {
            let reply = self.gateway.chat(self.request(templates::CLARIFY, session, bindings)?)?;
            match protocol::parse_clarify(&reply) {
                ClarifyReply::Ask(question) => {
                    if session.state == SessionState::AwaitingQuery {
                        session.set_state(SessionState::Clarifying);
                    }
                    session.transcript.push(user_turn);
                    session.push(Speaker::Robot, &question);
                    session.clarification_round += 1;
                    return Ok(OrchestratorAction::AskClarification { question });
                }
                ClarifyReply::Clear(q) => q,
            }
        };

        let answer = self.compute_answer(session, &turns, &resolved)?;
        if session.state == SessionState::AwaitingQuery {
            session.set_state(SessionState::Clarifying);
        }
        session.transcript.push(user_turn);
        session.resolved_question = Some(resolved);
        session.set_state(SessionState::Answering);
        Ok(self.commit_answer(session, answer))
    }

    /// Produce the final answer for a session whose question is resolved.
    pub fn answer(&self, session: &mut DialogueSession) -> Result<OrchestratorAction> {
        if session.state != SessionState::Answering {
            return Err(invalid("answering", session));
        }
        let question = session.resolved_question.clone().ok_or_else(|| invalid("answering with a resolved question", session))?;
        let turns = session.transcript.clone();
        let answer = self.compute_answer(session, &turns, &question)?;
        Ok(self.commit_answer(session, answer))
    }

    fn commit_answer(&self, session: &mut DialogueSession, a: Answer) -> OrchestratorAction {
        session.push(Speaker::Robot, &a.text);
        session.query_bbox = Some(a.bbox);
        session.localization_flagged = a.flagged;
        session.used_reference = a.retrieval.is_some();
        session.final_answer = Some(a.text.clone());
        let reference = a.retrieval.as_ref().map(ReferenceSummary::from);
        session.retrieval = a.retrieval;
        session.set_state(SessionState::AwaitingFeedback);
        OrchestratorAction::FinalAnswer { text: a.text, used_reference: reference.is_some(), reference }
    }

    /// Ask the model where the subject is, retrying once; fall back to the
    /// whole image and flag the session.
    fn localize(&self, session: &DialogueSession, bindings: &BTreeMap<String, String>) -> Result<(BoundingBox, bool)> {
        for attempt in 0..2 {
            let reply = self.gateway.chat(self.request(templates::LOCALIZE, session, bindings.clone())?)?;
            match protocol::parse_bbox(&reply, self.config.min_bbox_area) {
                Ok(b) => return Ok((b, false)),
                Err(e) => tracing::debug!(attempt, error = %e, "unparsable localization reply"),
            }
        }
        tracing::warn!(session = %session.session_id, "localization failed; using the full image");
        Ok((BoundingBox::FULL, true))
    }

    /// The retrieval query for a question about a region of the session image.
    pub fn query(&self, image: &DynamicImage, bbox: &BoundingBox, question: &str) -> Result<Option<RetrievalMatch>> {
        let q_img = embed_subject(&self.gateway, image, bbox)?;
        let q_text = self.gateway.embed_text(question)?;
        self.store.retrieve(&q_img, &q_text, &self.config.retrieval)
    }

    fn compute_answer(&self, session: &DialogueSession, turns: &[Turn], question: &str) -> Result<Answer> {
        let mut bindings = BTreeMap::from([
            ("transcript".to_owned(), DialogueSession::render_transcript(turns)),
            ("question".to_owned(), question.to_owned()),
        ]);
        let (mut bbox, mut flagged) = self.localize(session, &bindings)?;

        let retrieval = if self.config.retrieval_enabled {
            let image = images::decode(&self.gateway.images().get(&session.image_ref)?)?;
            if crate::distill::crop_rect(image.width(), image.height(), &bbox).is_err() {
                bbox = BoundingBox::FULL;
                flagged = true;
            }
            self.query(&image, &bbox, question)?
        } else {
            None
        };

        let text = match &retrieval {
            Some(m) => {
                bindings.insert("reference_q".into(), m.event.question.clone());
                bindings.insert("reference_a".into(), m.event.answer.clone());
                self.gateway.chat(self.request(templates::ANSWER_WITH_REFERENCE, session, bindings)?)?
            }
            None => self.gateway.chat(self.request(templates::ANSWER_PLAIN, session, bindings)?)?,
        };
        Ok(Answer { bbox, flagged, retrieval, text: text.trim().to_owned() })
    }

    /// Classify the user's reaction to the final answer; on confirmation or
    /// correction distill the session into an event.
    pub fn record_feedback(&self, session: &mut DialogueSession, feedback: &str) -> Result<OrchestratorAction> {
        if session.state != SessionState::AwaitingFeedback {
            return Err(invalid("awaiting_feedback", session));
        }
        let final_answer = session.final_answer.clone().unwrap_or_default();
        let user_turn = session.make_turn(Speaker::User, feedback);
        let mut turns = session.transcript.clone();
        turns.push(user_turn.clone());
        let bindings = BTreeMap::from([
            ("transcript".to_owned(), DialogueSession::render_transcript(&turns)),
            ("question".to_owned(), session.resolved_question.clone().unwrap_or_default()),
            ("answer".to_owned(), final_answer.clone()),
            ("feedback".to_owned(), feedback.to_owned()),
        ]);
        let reply = self.gateway.chat(self.request(templates::FEEDBACK_CLASSIFY, session, bindings)?)?;
        session.transcript.push(user_turn);

        let (outcome, correct) = match protocol::parse_feedback(&reply) {
            FeedbackKind::Confirm => (Outcome::Confirmed, final_answer),
            FeedbackKind::Correct(c) => {
                session.correction = Some(c.clone());
                (Outcome::Corrected, c)
            }
            FeedbackKind::Unknown => {
                session.outcome = Some(Outcome::Unknown);
                session.set_state(SessionState::Closed);
                return Ok(OrchestratorAction::SessionClosed { outcome: Outcome::Unknown, event_id: None });
            }
        };
        session.correct_answer = Some(correct);
        session.outcome = Some(outcome);
        session.set_state(SessionState::Distilling);
        self.resume_distillation(session)
    }

    /// Run (or retry) distillation for a session in `Distilling`.
    pub fn resume_distillation(&self, session: &mut DialogueSession) -> Result<OrchestratorAction> {
        if session.state != SessionState::Distilling {
            return Err(invalid("distilling", session));
        }
        let outcome = match self.distiller.run(session)? {
            DistillOutcome::Stored(id) | DistillOutcome::AlreadyStored(id) => {
                session.event_id = Some(id);
                session.outcome.unwrap_or(Outcome::Confirmed)
            }
            DistillOutcome::Dropped => {
                session.outcome = Some(Outcome::Dropped);
                Outcome::Dropped
            }
        };
        session.set_state(SessionState::Closed);
        Ok(OrchestratorAction::SessionClosed { outcome, event_id: session.event_id })
    }
}
