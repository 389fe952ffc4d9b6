//! History event database: append-only persistence of interaction events
//! and exact dual-threshold retrieval over them.

mod log;
mod types;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use crate::error::{Error, Result};
use crate::gateway::Embedding;

pub use log::{decode_body, encode as encode_record, scan as scan_log, MAGIC as LOG_MAGIC};
pub use types::{
    BoundingBox, EventDraft, EventId, InteractionEvent, RetrievalConfig, RetrievalMatch,
    DEFAULT_MIN_BBOX_AREA,
};

pub const LOG_FILE: &str = "events.log";

/// Cosine of the angle between two embeddings, clamped to [-1, 1].
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine_slices(a.values(), b.values())
}

pub(crate) fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    // sqrt(na * nb) rather than sqrt(na) * sqrt(nb): for a == b this is
    // exactly na, so identical vectors score exactly 1.0
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Preference order among qualifying matches: larger combined similarity,
/// then more recent, then the lexicographically greater (newer) id.
pub fn rank_matches(a: &RetrievalMatch, b: &RetrievalMatch) -> Ordering {
    let sa = a.sim_img + a.sim_text;
    let sb = b.sim_img + b.sim_text;
    sb.partial_cmp(&sa)
        .unwrap_or(Ordering::Equal)
        .then_with(|| b.event.created_at.cmp(&a.event.created_at))
        .then_with(|| b.event.event_id.to_string().cmp(&a.event.event_id.to_string()))
}

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    pub min_bbox_area: f64,
    /// fsync after every append.
    pub sync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self { min_bbox_area: DEFAULT_MIN_BBOX_AREA, sync: true }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StoreStats {
    pub count: usize,
    pub dim: Option<usize>,
    pub provider_tag: Option<String>,
    pub last_event_id: Option<EventId>,
}

#[derive(Default)]
struct Index {
    events: Vec<InteractionEvent>,
    by_id: HashMap<EventId, usize>,
    by_session: HashMap<String, EventId>,
    dim: Option<usize>,
    provider_tag: Option<String>,
}

impl Index {
    fn push(&mut self, event: InteractionEvent) {
        self.dim.get_or_insert(event.e_img.dim());
        self.provider_tag.get_or_insert_with(|| event.provider_tag.clone());
        self.by_id.insert(event.event_id, self.events.len());
        self.by_session.entry(event.session_id.clone()).or_insert(event.event_id);
        self.events.push(event);
    }

    fn next_id(&self) -> EventId {
        EventId(self.events.last().map_or(1, |e| e.event_id.0 + 1))
    }
}

/// Single writer, many readers. Readers always see whole events: an event
/// becomes visible only after its record has been appended.
pub struct EventStore {
    index: RwLock<Index>,
    writer: Mutex<Option<log::LogWriter>>,
    path: Option<PathBuf>,
    options: StoreOptions,
}

impl EventStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(dir, StoreOptions::default())
    }

    pub fn open_with(dir: impl AsRef<Path>, options: StoreOptions) -> Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::storage("creating store directory", e))?;
        let path = dir.join(LOG_FILE);
        let (writer, events) = log::LogWriter::open(&path, options.sync)?;
        let mut index = Index::default();
        for e in events {
            index.push(e);
        }
        Ok(Self {
            index: RwLock::new(index),
            writer: Mutex::new(Some(writer)),
            path: Some(path),
            options,
        })
    }

    /// A store without persistence, for simulations and tests.
    pub fn in_memory() -> Self {
        Self {
            index: RwLock::default(),
            writer: Mutex::new(None),
            path: None,
            options: StoreOptions { sync: false, ..StoreOptions::default() },
        }
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Index> {
        self.index.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn insert_event(&self, draft: EventDraft) -> Result<EventId> {
        self.insert_inner(draft, false).map(|(id, _)| id)
    }

    /// Insert unless an event from the same session already exists, in which
    /// case that event's id is returned with `false`.
    pub fn insert_once_per_session(&self, draft: EventDraft) -> Result<(EventId, bool)> {
        self.insert_inner(draft, true)
    }

    fn insert_inner(&self, draft: EventDraft, once: bool) -> Result<(EventId, bool)> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let event = {
            let index = self.read();
            if once {
                if let Some(&id) = index.by_session.get(&draft.session_id) {
                    return Ok((id, false));
                }
            }
            if let Some(dim) = index.dim {
                for got in [draft.e_img.dim(), draft.e_text.dim()] {
                    if got != dim {
                        return Err(Error::DimensionMismatch { expected: dim, got });
                    }
                }
            }
            let event = InteractionEvent::from_draft(index.next_id(), draft);
            event.validate(self.options.min_bbox_area)?;
            if let Some(tag) = &index.provider_tag {
                if *tag != event.provider_tag {
                    return Err(Error::InvalidEvent(format!(
                        "provider tag {} does not match store tag {tag}",
                        event.provider_tag
                    )));
                }
            }
            event
        };
        if let Some(w) = writer.as_mut() {
            w.append(&log::encode(&event)?)?;
        }
        let id = event.event_id;
        self.index.write().unwrap_or_else(|e| e.into_inner()).push(event);
        Ok((id, true))
    }

    pub fn get_event(&self, id: EventId) -> Result<InteractionEvent> {
        let index = self.read();
        index
            .by_id
            .get(&id)
            .map(|&i| index.events[i].clone())
            .ok_or_else(|| Error::NotFound(format!("event {id}")))
    }

    pub fn event_for_session(&self, session_id: &str) -> Option<EventId> {
        self.read().by_session.get(session_id).copied()
    }

    pub fn count(&self) -> usize {
        self.read().events.len()
    }

    pub fn dim(&self) -> Option<usize> {
        self.read().dim
    }

    pub fn stats(&self) -> StoreStats {
        let index = self.read();
        StoreStats {
            count: index.events.len(),
            dim: index.dim,
            provider_tag: index.provider_tag.clone(),
            last_event_id: index.events.last().map(|e| e.event_id),
        }
    }

    /// Events in insertion order.
    pub fn list_events(&self, offset: usize, limit: usize) -> Vec<InteractionEvent> {
        self.read().events.iter().skip(offset).take(limit).cloned().collect()
    }

    /// Events with ids strictly greater than `after` (all events when `None`).
    pub fn events_after(&self, after: Option<EventId>) -> Vec<InteractionEvent> {
        let index = self.read();
        let start = after.map_or(0, |a| index.events.partition_point(|e| e.event_id <= a));
        index.events[start..].to_vec()
    }

    pub fn count_after(&self, after: Option<EventId>) -> usize {
        let index = self.read();
        let start = after.map_or(0, |a| index.events.partition_point(|e| e.event_id <= a));
        index.events.len() - start
    }

    /// Every event passing both thresholds, best first, at most
    /// `config.max_candidates` of them.
    pub fn search(
        &self,
        q_img: &Embedding,
        q_text: &Embedding,
        config: &RetrievalConfig,
    ) -> Result<Vec<RetrievalMatch>> {
        let index = self.read();
        let Some(dim) = index.dim else { return Ok(Vec::new()) };
        for got in [q_img.dim(), q_text.dim()] {
            if got != dim {
                return Err(Error::DimensionMismatch { expected: dim, got });
            }
        }
        let mut hits = Vec::new();
        for e in &index.events {
            let sim_img = cosine_similarity(q_img, &e.e_img)?;
            if sim_img < config.tau_img {
                continue;
            }
            let sim_text = cosine_similarity(q_text, &e.e_text)?;
            if sim_text < config.tau_text {
                continue;
            }
            hits.push(RetrievalMatch { event: e.clone(), sim_img, sim_text });
        }
        hits.sort_by(rank_matches);
        hits.truncate(config.max_candidates.max(1));
        Ok(hits)
    }

    /// The best event passing both thresholds, or `None`.
    pub fn retrieve(
        &self,
        q_img: &Embedding,
        q_text: &Embedding,
        config: &RetrievalConfig,
    ) -> Result<Option<RetrievalMatch>> {
        Ok(self
            .search(q_img, q_text, &RetrievalConfig { max_candidates: 1, ..*config })?
            .into_iter()
            .next())
    }

    pub fn flush(&self) -> Result<()> {
        match self.writer.lock().unwrap_or_else(|e| e.into_inner()).as_mut() {
            Some(w) => w.flush(),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::images::ImageRef;
    use chrono::Utc;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::normalized(v.to_vec(), "t").unwrap()
    }

    fn draft(img: &[f32], text: &[f32], session: &str) -> EventDraft {
        EventDraft {
            image_ref: format!("{}.png", "0".repeat(64)).parse::<ImageRef>().unwrap(),
            subject_bbox: BoundingBox::FULL,
            question: "What is the name of this medicine bottle?".into(),
            answer: "Vitamin B1 (Thiamine)".into(),
            e_img: emb(img),
            e_text: emb(text),
            created_at: Utc::now(),
            session_id: session.into(),
            localization_flagged: false,
        }
    }

    #[test]
    fn cosine_worked_values() {
        let a = Embedding::from_raw(vec![1.0, 0.0], "t").unwrap();
        let b = Embedding::from_raw(vec![0.0, 1.0], "t").unwrap();
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!(cosine_similarity(&a, &b).unwrap().abs() < 1e-9);
        let h = std::f32::consts::FRAC_1_SQRT_2;
        let c = Embedding::from_raw(vec![h, h], "t").unwrap();
        assert!((cosine_similarity(&a, &c).unwrap() - 0.70710678).abs() < 1e-8);
    }

    #[test]
    fn cosine_errors() {
        let a = Embedding::from_raw(vec![1.0, 0.0], "t").unwrap();
        let b = Embedding::from_raw(vec![1.0, 0.0, 0.0], "t").unwrap();
        let z = Embedding::from_raw(vec![0.0, 0.0], "t").unwrap();
        assert!(matches!(cosine_similarity(&a, &b), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(cosine_similarity(&a, &z), Err(Error::ZeroVector)));
    }

    #[test]
    fn empty_store_has_no_match() {
        let store = EventStore::in_memory();
        let q = emb(&[1.0, 0.0, 0.0]);
        assert_eq!(store.count(), 0);
        assert!(store.retrieve(&q, &q, &RetrievalConfig::default()).unwrap().is_none());
    }

    #[test]
    fn identical_query_matches_with_unit_similarity() {
        let store = EventStore::in_memory();
        let id = store.insert_event(draft(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0], "s1")).unwrap();
        let cfg = RetrievalConfig::new(0.9, 0.9).unwrap();
        let m = store
            .retrieve(&emb(&[1.0, 2.0, 3.0]), &emb(&[3.0, 1.0, 0.0]), &cfg)
            .unwrap()
            .unwrap();
        assert_eq!(m.event.event_id, id);
        assert!((m.sim_img - 1.0).abs() < 1e-9 && (m.sim_text - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_leaves_count_unchanged() {
        let store = EventStore::in_memory();
        store.insert_event(draft(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], "s1")).unwrap();
        let err = store.insert_event(draft(&[1.0, 0.0], &[0.0, 1.0], "s2")).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, got: 2 }));
        assert_eq!(store.count(), 1);
    }

    #[test]
    fn invalid_events_are_rejected() {
        let store = EventStore::in_memory();
        let mut d = draft(&[1.0, 0.0], &[0.0, 1.0], "s1");
        d.answer = "  ".into();
        assert!(matches!(store.insert_event(d), Err(Error::InvalidEvent(_))));
        let mut d = draft(&[1.0, 0.0], &[0.0, 1.0], "s1");
        d.e_img = Embedding::from_raw(vec![2.0, 0.0], "t").unwrap();
        assert!(matches!(store.insert_event(d), Err(Error::InvalidEvent(_))));
        let mut d = draft(&[1.0, 0.0], &[0.0, 1.0], "s1");
        d.e_text = Embedding::normalized(vec![0.0, 1.0], "other").unwrap();
        assert!(matches!(store.insert_event(d), Err(Error::InvalidEvent(_))));
        assert_eq!(store.count(), 0);
    }

    #[test]
    fn newer_event_wins_ties() {
        let store = EventStore::in_memory();
        let mut first = draft(&[1.0, 0.0], &[0.0, 1.0], "s1");
        first.answer = "Vitamin B1".into();
        let mut second = draft(&[1.0, 0.0], &[0.0, 1.0], "s2");
        second.answer = "Vitamin B6".into();
        second.created_at = first.created_at;
        store.insert_event(first).unwrap();
        let newer = store.insert_event(second).unwrap();
        let q_img = emb(&[1.0, 0.0]);
        let q_text = emb(&[0.0, 1.0]);
        let m = store.retrieve(&q_img, &q_text, &RetrievalConfig::default()).unwrap().unwrap();
        assert_eq!(m.event.event_id, newer);
        assert_eq!(m.event.answer, "Vitamin B6");
    }

    #[test]
    fn pagination_and_lookup() {
        let store = EventStore::in_memory();
        let ids: Vec<_> = (0..25)
            .map(|i| store.insert_event(draft(&[1.0, i as f32], &[0.0, 1.0], &format!("s{i}"))).unwrap())
            .collect();
        let page = store.list_events(0, 10);
        assert_eq!(page.len(), 10);
        assert_eq!(page.iter().map(|e| e.event_id).collect::<Vec<_>>(), ids[..10]);
        assert_eq!(store.list_events(20, 10).len(), 5);
        assert!(matches!(store.get_event(EventId(999)), Err(Error::NotFound(_))));
        assert_eq!(store.events_after(Some(ids[19])).len(), 5);
        assert_eq!(store.count_after(None), 25);
    }

    #[test]
    fn once_per_session() {
        let store = EventStore::in_memory();
        let (a, fresh) = store.insert_once_per_session(draft(&[1.0, 0.0], &[0.0, 1.0], "s1")).unwrap();
        assert!(fresh);
        let (b, fresh) = store.insert_once_per_session(draft(&[1.0, 0.0], &[0.0, 1.0], "s1")).unwrap();
        assert!(!fresh);
        assert_eq!(a, b);
        assert_eq!(store.count(), 1);
    }

    #[test]
    fn persists_and_truncates_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let opts = StoreOptions { sync: false, ..Default::default() };
        let original = {
            let store = EventStore::open_with(dir.path(), opts).unwrap();
            for i in 0..3 {
                store.insert_event(draft(&[1.0, i as f32], &[0.5, 1.0], &format!("s{i}"))).unwrap();
            }
            store.list_events(0, 10)
        };
        let path = dir.path().join(LOG_FILE);
        let full = std::fs::read(&path).unwrap();
        // simulate a crash halfway through a fourth append
        let extra = encode_record(&original[0]).unwrap();
        let mut torn = full.clone();
        torn.extend_from_slice(&extra[..extra.len() / 2]);
        std::fs::write(&path, &torn).unwrap();

        let store = EventStore::open_with(dir.path(), opts).unwrap();
        assert_eq!(store.list_events(0, 10), original);
        assert_eq!(std::fs::read(&path).unwrap(), full);
    }

    #[test]
    fn mid_file_corruption_refuses_to_open() {
        let dir = tempfile::tempdir().unwrap();
        let opts = StoreOptions { sync: false, ..Default::default() };
        {
            let store = EventStore::open_with(dir.path(), opts).unwrap();
            store.insert_event(draft(&[1.0, 0.0], &[0.5, 1.0], "a")).unwrap();
            store.insert_event(draft(&[1.0, 1.0], &[0.5, 1.0], "b")).unwrap();
        }
        let path = dir.path().join(LOG_FILE);
        let mut data = std::fs::read(&path).unwrap();
        data[LOG_MAGIC.len() + 20] ^= 0xff;
        std::fs::write(&path, &data).unwrap();
        assert!(matches!(EventStore::open_with(dir.path(), opts), Err(Error::StorageFailure(_))));
    }
}
