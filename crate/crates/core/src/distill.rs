//! Turning a finished dialogue into a stored interaction event.
//!
//! A session whose answer was confirmed or corrected is compressed by the
//! model into `(concise question, subject box, correct answer)`. The subject
//! is cropped out of the session image, both the crop and the question are
//! embedded, and the result is appended to the event store. Nothing partial
//! is ever stored: any failure before the insert leaves the store untouched.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::Utc;
use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::dialogue::protocol::parse_distill;
use crate::dialogue::templates::{self, Templates};
use crate::dialogue::{DialogueSession, SessionState};
use crate::error::{Error, Result};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, Role};
use crate::images::{self, ImageRef};
use crate::store::{BoundingBox, EventDraft, EventId, EventStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledRecord {
    pub concise_question: String,
    pub bbox: BoundingBox,
    pub answer: String,
    pub source_session: String,
    pub image_ref: ImageRef,
    pub localization_flagged: bool,
}

/// Pixel rectangle `(x, y, width, height)` for a ratio box on a `w`x`h`
/// image. Edges are rounded half-up independently.
pub fn crop_rect(w: u32, h: u32, bbox: &BoundingBox) -> Result<(u32, u32, u32, u32)> {
    let round = |v: f64, max: u32| ((v + 0.5).floor().max(0.0) as u64).min(u64::from(max)) as u32;
    let (x0, x1) = (round(bbox.x0 * f64::from(w), w), round(bbox.x1 * f64::from(w), w));
    let (y0, y1) = (round(bbox.y0 * f64::from(h), h), round(bbox.y1 * f64::from(h), h));
    let (cw, ch) = (x1.saturating_sub(x0), y1.saturating_sub(y0));
    if cw == 0 || ch == 0 {
        return Err(Error::DegenerateCrop { width: cw, height: ch });
    }
    Ok((x0, y0, cw, ch))
}

pub fn crop_subject(image: &DynamicImage, bbox: &BoundingBox) -> Result<DynamicImage> {
    let (x, y, w, h) = crop_rect(image.width(), image.height(), bbox)?;
    Ok(image.crop_imm(x, y, w, h))
}

/// Crop, re-encode as PNG and embed a subject region.
pub(crate) fn embed_subject(gateway: &Gateway, image: &DynamicImage, bbox: &BoundingBox) -> Result<crate::gateway::Embedding> {
    let crop = crop_subject(image, bbox)?;
    gateway.embed_image(&images::encode_png(&crop)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct AuditEntry<'a> {
    at: chrono::DateTime<Utc>,
    session_id: &'a str,
    outcome: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    event_id: Option<EventId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

/// Append-only JSON-lines record of distillation results.
pub struct AuditLog {
    file: Mutex<File>,
}

impl AuditLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::storage("opening audit log", e))?;
        Ok(Self { file: Mutex::new(file) })
    }

    fn write(&self, entry: &AuditEntry<'_>) {
        let mut line = serde_json::to_string(entry).unwrap_or_default();
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = f.write_all(line.as_bytes()) {
            tracing::error!(error = %e, "failed to write audit entry");
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillOutcome {
    Stored(EventId),
    /// The session already produced this event earlier.
    AlreadyStored(EventId),
    Dropped,
}

pub struct Distiller {
    gateway: Arc<Gateway>,
    store: Arc<EventStore>,
    templates: Arc<Templates>,
    audit: Option<Arc<AuditLog>>,
    min_bbox_area: f64,
}

impl Distiller {
    pub fn new(
        gateway: Arc<Gateway>,
        store: Arc<EventStore>,
        templates: Arc<Templates>,
        audit: Option<Arc<AuditLog>>,
        min_bbox_area: f64,
    ) -> Self {
        Self { gateway, store, templates, audit, min_bbox_area }
    }

    /// One distill call (plus one retry on unparsable output).
    pub fn distill(&self, session: &DialogueSession) -> Result<DistilledRecord> {
        if session.state != SessionState::Distilling {
            return Err(Error::InvalidState { expected: "distilling", actual: session.state.to_string() });
        }
        let answer = session.correct_answer.clone().ok_or(Error::InvalidState {
            expected: "a determined correct answer",
            actual: "none".into(),
        })?;
        let mut bindings = BTreeMap::new();
        bindings.insert("transcript".to_owned(), session.transcript_text());
        bindings.insert("question".to_owned(), session.resolved_question.clone().unwrap_or_default());
        bindings.insert("answer".to_owned(), answer);
        let prompt = self.templates.render(templates::DISTILL, &bindings)?;
        let request = ChatRequest {
            messages: vec![ChatMessage::new(Role::User, prompt)],
            images: vec![session.image_ref.clone()],
            template_id: templates::DISTILL.into(),
            bindings,
            ..Default::default()
        };

        let mut last_err = None;
        for attempt in 0..2 {
            let reply = self.gateway.chat(request.clone())?;
            match parse_distill(&reply, self.min_bbox_area) {
                Ok(f) => {
                    return Ok(DistilledRecord {
                        concise_question: f.question,
                        bbox: f.bbox,
                        answer: f.answer,
                        source_session: session.session_id.clone(),
                        image_ref: session.image_ref.clone(),
                        localization_flagged: session.localization_flagged,
                    })
                }
                Err(e) => {
                    tracing::debug!(attempt, error = %e, "unparsable distill reply");
                    last_err = Some(e);
                }
            }
        }
        Err(last_err.expect("two attempts were made"))
    }

    /// Crop, embed and insert. At most one event per source session.
    pub fn finalize_event(&self, record: &DistilledRecord) -> Result<(EventId, bool)> {
        if let Some(id) = self.store.event_for_session(&record.source_session) {
            return Ok((id, false));
        }
        let bytes = self.gateway.images().get(&record.image_ref)?;
        let image = images::decode(&bytes)?;
        let e_img = embed_subject(&self.gateway, &image, &record.bbox)?;
        let e_text = self.gateway.embed_text(&record.concise_question)?;
        self.store.insert_once_per_session(EventDraft {
            image_ref: record.image_ref.clone(),
            subject_bbox: record.bbox,
            question: record.concise_question.clone(),
            answer: record.answer.clone(),
            e_img,
            e_text,
            created_at: Utc::now(),
            session_id: record.source_session.clone(),
            localization_flagged: record.localization_flagged,
        })
    }

    /// Full pipeline for a session in `Distilling`. Parse failures drop the
    /// record with an audit entry; provider and storage failures propagate
    /// so the caller can retry.
    pub fn run(&self, session: &DialogueSession) -> Result<DistillOutcome> {
        if let Some(id) = self.store.event_for_session(&session.session_id) {
            return Ok(DistillOutcome::AlreadyStored(id));
        }
        let record = match self.distill(session) {
            Ok(r) => r,
            Err(Error::ParseFailure(reason)) => {
                self.audit(&session.session_id, "dropped", None, Some(reason));
                return Ok(DistillOutcome::Dropped);
            }
            Err(e) => return Err(e),
        };
        let (id, fresh) = match self.finalize_event(&record) {
            Ok(r) => r,
            Err(e @ Error::DegenerateCrop { .. }) => {
                self.audit(&session.session_id, "dropped", None, Some(e.to_string()));
                return Ok(DistillOutcome::Dropped);
            }
            Err(e) => return Err(e),
        };
        if fresh {
            self.audit(&session.session_id, "stored", Some(id), None);
            Ok(DistillOutcome::Stored(id))
        } else {
            Ok(DistillOutcome::AlreadyStored(id))
        }
    }

    fn audit(&self, session_id: &str, outcome: &str, event_id: Option<EventId>, reason: Option<String>) {
        if let Some(log) = &self.audit {
            log.write(&AuditEntry { at: Utc::now(), session_id, outcome, event_id, reason });
        }
    }
}
