use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::Embedding;
use crate::images::ImageRef;

/// Smallest subject area accepted by default, as a fraction of the image.
pub const DEFAULT_MIN_BBOX_AREA: f64 = 1e-4;

/// Sequential event identifier. Rendered zero-padded so lexicographic and
/// numeric order agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EventId(pub u64);

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ev-{:012}", self.0)
    }
}

impl FromStr for EventId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.strip_prefix("ev-")
            .unwrap_or(s)
            .parse::<u64>()
            .map(EventId)
            .map_err(|_| Error::BadRequest(format!("malformed event id `{s}`")))
    }
}

impl TryFrom<String> for EventId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EventId> for String {
    fn from(id: EventId) -> String {
        id.to_string()
    }
}

/// Subject region as fractions of image width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub const FULL: BoundingBox = BoundingBox { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64, min_area: f64) -> Result<Self> {
        let b = BoundingBox { x0, y0, x1, y1 };
        b.validate(min_area)?;
        Ok(b)
    }

    /// Clamp each coordinate into [0, 1] before validating.
    pub fn clamped(x0: f64, y0: f64, x1: f64, y1: f64, min_area: f64) -> Result<Self> {
        let c = |v: f64| if v.is_nan() { v } else { v.clamp(0.0, 1.0) };
        Self::new(c(x0), c(y0), c(x1), c(y1), min_area)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn validate(&self, min_area: f64) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if ![self.x0, self.y0, self.x1, self.y1].into_iter().all(in_unit) {
            return Err(Error::InvalidBoundingBox(format!("{self:?} has coordinates outside [0, 1]")));
        }
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::InvalidBoundingBox(format!("{self:?} is empty or inverted")));
        }
        if self.area() < min_area {
            return Err(Error::InvalidBoundingBox(format!(
                "{self:?} area {} is below the minimum {min_area}",
                self.area()
            )));
        }
        Ok(())
    }
}

/// An event as handed to the store; the store assigns the id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDraft {
    pub image_ref: ImageRef,
    pub subject_bbox: BoundingBox,
    pub question: String,
    pub answer: String,
    pub e_img: Embedding,
    pub e_text: Embedding,
    pub created_at: DateTime<Utc>,
    pub session_id: String,
    #[serde(default)]
    pub localization_flagged: bool,
}

/// One distilled, corrected dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub event_id: EventId,
    pub image_ref: ImageRef,
    pub subject_bbox: BoundingBox,
    pub question: String,
    pub answer: String,
    pub e_img: Embedding,
    pub e_text: Embedding,
    pub created_at: DateTime<Utc>,
    pub session_id: String,
    pub provider_tag: String,
    #[serde(default)]
    pub localization_flagged: bool,
}

impl InteractionEvent {
    pub(crate) fn from_draft(id: EventId, d: EventDraft) -> Self {
        InteractionEvent {
            event_id: id,
            provider_tag: d.e_img.provider_tag().to_owned(),
            image_ref: d.image_ref,
            subject_bbox: d.subject_bbox,
            question: d.question,
            answer: d.answer,
            e_img: d.e_img,
            e_text: d.e_text,
            created_at: d.created_at,
            session_id: d.session_id,
            localization_flagged: d.localization_flagged,
        }
    }

    pub fn validate(&self, min_bbox_area: f64) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidEvent(m));
        if self.question.trim().is_empty() {
            return bad("question is empty".into());
        }
        if self.answer.trim().is_empty() {
            return bad("answer is empty".into());
        }
        if self.e_img.dim() != self.e_text.dim() {
            return Err(Error::DimensionMismatch { expected: self.e_img.dim(), got: self.e_text.dim() });
        }
        if !self.e_img.is_unit() || !self.e_text.is_unit() {
            return bad("embeddings must be unit-normalized".into());
        }
        if self.e_img.provider_tag() != self.provider_tag || self.e_text.provider_tag() != self.provider_tag {
            return bad(format!(
                "embedding provider tags ({}, {}) differ from event tag {}",
                self.e_img.provider_tag(),
                self.e_text.provider_tag(),
                self.provider_tag
            ));
        }
        if self.session_id.is_empty() {
            return bad("session id is empty".into());
        }
        self.subject_bbox
            .validate(min_bbox_area)
            .map_err(|e| Error::InvalidEvent(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub tau_img: f64,
    pub tau_text: f64,
    pub max_candidates: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { tau_img: 0.80, tau_text: 0.75, max_candidates: 5 }
    }
}

impl RetrievalConfig {
    pub fn new(tau_img: f64, tau_text: f64) -> Result<Self> {
        let c = Self { tau_img, tau_text, ..Self::default() };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_img", self.tau_img), ("tau_text", self.tau_text)] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::ConfigInvalid {
                    field: format!("retrieval.{name}"),
                    reason: format!("{v} is outside [-1, 1]"),
                });
            }
        }
        if self.max_candidates == 0 {
            return Err(Error::ConfigInvalid {
                field: "retrieval.max_candidates".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMatch {
    pub event: InteractionEvent,
    pub sim_img: f64,
    pub sim_text: f64,
}
