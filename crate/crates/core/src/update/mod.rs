//! Threshold-triggered export of accumulated events as a visual instruction
//! tuning batch, hand-off to an external trainer, and model version tracking.
//!
//! Batch directory layout:
//!
//! ```text
//! exports/<batch_id>/
//!   manifest.json      Manifest
//!   records.jsonl      one record per event:
//!                      {"id", "event_id", "image": "images/<file>",
//!                       "conversations": [{"from": "human", "value": "<image>\n<question>"},
//!                                         {"from": "gpt",   "value": "<answer>"}]}
//!   images/<file>      original scene images, content-addressed
//! ```
//!
//! Batch ids are derived from the covered event-id range, so a re-export of
//! the same events after a crash reproduces the same id and directory.

mod trainer;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::images::ImageStore;
use crate::store::{EventId, EventStore, InteractionEvent};

pub use trainer::{
    trainer_router, HttpTrainer, JobReport, JobStatus, MockBehavior, MockTrainer, TrainRequest,
    TrainResponse, Trainer,
};

pub const DEFAULT_UPDATE_THRESHOLD: usize = 100;
pub const STATE_FILE: &str = "update_state.json";
pub const EXPORTS_DIR: &str = "exports";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const TRAIN_HINT: &str = "update_visual_encoder";

pub fn should_update(event_count_since_last_export: usize, threshold: usize) -> bool {
    event_count_since_last_export >= threshold.max(1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub batch_id: String,
    pub record_count: usize,
    pub created_at: DateTime<Utc>,
    pub first_event_id: EventId,
    pub last_event_id: EventId,
    pub source_model_version: String,
    pub train_hint: String,
    pub records_file: String,
    pub format: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub from: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub id: String,
    pub event_id: EventId,
    pub image: String,
    pub conversations: Vec<Conversation>,
}

impl BatchRecord {
    fn from_event(e: &InteractionEvent) -> Self {
        BatchRecord {
            id: e.event_id.to_string(),
            event_id: e.event_id,
            image: format!("images/{}", e.image_ref),
            conversations: vec![
                Conversation { from: "human".into(), value: format!("<image>\n{}", e.question) },
                Conversation { from: "gpt".into(), value: e.answer.clone() },
            ],
        }
    }

    pub fn question(&self) -> &str {
        self.conversations[0].value.trim_start_matches("<image>\n")
    }

    pub fn answer(&self) -> &str {
        &self.conversations[1].value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub records: Vec<BatchRecord>,
}

impl TrainingBatch {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(
            &std::fs::read(dir.join(MANIFEST_FILE)).map_err(|e| Error::storage("reading manifest", e))?,
        )
        .map_err(|e| Error::storage("parsing manifest", e))?;
        let text = std::fs::read_to_string(dir.join(&manifest.records_file))
            .map_err(|e| Error::storage("reading records", e))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::storage("parsing record", e)))
            .collect::<Result<_>>()?;
        Ok(Self { dir: dir.to_owned(), manifest, records })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingJob {
    pub job_id: String,
    pub batch_id: String,
    pub submitted_at: DateTime<Utc>,
    pub status: JobStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateState {
    pub last_exported_event_id: Option<EventId>,
    pub active_model_version: String,
    pub pending_job: Option<PendingJob>,
    /// Most recent exported batch; kept for resubmission after a failed job.
    pub last_batch_id: Option<String>,
    pub last_job: Option<PendingJob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStatus {
    pub events_since_export: usize,
    pub threshold: usize,
    pub last_exported_event_id: Option<EventId>,
    pub active_model_version: String,
    pub pending_job: Option<PendingJob>,
    pub last_batch_id: Option<String>,
    pub last_job: Option<PendingJob>,
}

pub struct UpdateManager {
    data_dir: PathBuf,
    store: Arc<EventStore>,
    images: Arc<ImageStore>,
    threshold: usize,
    state: Mutex<UpdateState>,
    export_lock: Mutex<()>,
    trainer: Option<Arc<dyn Trainer>>,
    gateway: Option<Arc<Gateway>>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::storage("creating temp file", e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::storage("writing temp file", e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::storage("renaming temp file", e))
}

impl UpdateManager {
    /// Load (or initialize) update state under `data_dir`.
    pub fn open(
        data_dir: impl Into<PathBuf>,
        store: Arc<EventStore>,
        images: Arc<ImageStore>,
        threshold: usize,
        initial_model_version: &str,
    ) -> Result<Self> {
        let data_dir = data_dir.into();
        std::fs::create_dir_all(data_dir.join(EXPORTS_DIR)).map_err(|e| Error::storage("creating exports directory", e))?;
        let path = data_dir.join(STATE_FILE);
        let state = if path.exists() {
            let bytes = std::fs::read(&path).map_err(|e| Error::storage("reading update state", e))?;
            serde_json::from_slice(&bytes).map_err(|e| Error::storage("parsing update state", e))?
        } else {
            UpdateState {
                last_exported_event_id: None,
                active_model_version: initial_model_version.to_owned(),
                pending_job: None,
                last_batch_id: None,
                last_job: None,
            }
        };
        Ok(Self {
            data_dir,
            store,
            images,
            threshold: threshold.max(1),
            state: Mutex::new(state),
            export_lock: Mutex::new(()),
            trainer: None,
            gateway: None,
        })
    }

    pub fn with_trainer(mut self, trainer: Arc<dyn Trainer>) -> Self {
        self.trainer = Some(trainer);
        self
    }

    /// Model activations are forwarded to this gateway.
    pub fn with_gateway(mut self, gateway: Arc<Gateway>) -> Self {
        gateway.set_model_version(self.state().active_model_version.clone());
        self.gateway = Some(gateway);
        self
    }

    fn state(&self) -> MutexGuard<'_, UpdateState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn persist(&self, state: &UpdateState) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(state).map_err(|e| Error::storage("serializing update state", e))?;
        write_atomic(&self.data_dir.join(STATE_FILE), &bytes)
    }

    pub fn has_trainer(&self) -> bool {
        self.trainer.is_some()
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn exports_dir(&self) -> PathBuf {
        self.data_dir.join(EXPORTS_DIR)
    }

    pub fn snapshot(&self) -> UpdateState {
        self.state().clone()
    }

    pub fn events_since_export(&self) -> usize {
        self.store.count_after(self.state().last_exported_event_id)
    }

    /// True once the events accumulated since the last export reach the threshold.
    pub fn check_trigger(&self) -> bool {
        should_update(self.events_since_export(), self.threshold)
    }

    pub fn status(&self) -> UpdateStatus {
        let s = self.snapshot();
        UpdateStatus {
            events_since_export: self.store.count_after(s.last_exported_event_id),
            threshold: self.threshold,
            last_exported_event_id: s.last_exported_event_id,
            active_model_version: s.active_model_version,
            pending_job: s.pending_job,
            last_batch_id: s.last_batch_id,
            last_job: s.last_job,
        }
    }

    /// Write the batch directory and advance the export cursor.
    pub fn export_training_batch(&self) -> Result<TrainingBatch> {
        let _exporting = self.export_lock.lock().unwrap_or_else(|e| e.into_inner());
        let batch = self.write_batch()?;
        self.commit_export(&batch)?;
        Ok(batch)
    }

    /// First half of an export: write every event after the cursor to a
    /// batch directory without touching the cursor.
    pub fn write_batch(&self) -> Result<TrainingBatch> {
        let (after, model) = {
            let s = self.state();
            (s.last_exported_event_id, s.active_model_version.clone())
        };
        let events = self.store.events_after(after);
        if !should_update(events.len(), self.threshold) {
            return Err(Error::ThresholdNotReached { count: events.len(), threshold: self.threshold });
        }
        let first = events.first().expect("threshold >= 1").event_id;
        let last = events.last().expect("threshold >= 1").event_id;
        let batch_id = format!("batch-{:012}-{:012}", first.0, last.0);
        let records: Vec<BatchRecord> = events.iter().map(BatchRecord::from_event).collect();
        let manifest = Manifest {
            batch_id: batch_id.clone(),
            record_count: records.len(),
            created_at: Utc::now(),
            first_event_id: first,
            last_event_id: last,
            source_model_version: model,
            train_hint: TRAIN_HINT.into(),
            records_file: RECORDS_FILE.into(),
            format: "llava-conversation".into(),
        };

        let exports = self.exports_dir();
        let tmp = exports.join(format!(".tmp-{batch_id}"));
        let dest = exports.join(&batch_id);
        let _ = std::fs::remove_dir_all(&tmp);
        std::fs::create_dir_all(tmp.join("images")).map_err(|e| Error::storage("creating batch directory", e))?;
        let mut seen = BTreeSet::new();
        for e in &events {
            if seen.insert(e.image_ref.clone()) {
                std::fs::copy(self.images.path_of(&e.image_ref), tmp.join("images").join(e.image_ref.as_str()))
                    .map_err(|err| Error::storage(&format!("copying image {}", e.image_ref), err))?;
            }
        }
        let mut lines = String::new();
        for r in &records {
            lines.push_str(&serde_json::to_string(r).map_err(|e| Error::storage("serializing record", e))?);
            lines.push('\n');
        }
        write_atomic(&tmp.join(RECORDS_FILE), lines.as_bytes())?;
        let m = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::storage("serializing manifest", e))?;
        write_atomic(&tmp.join(MANIFEST_FILE), &m)?;
        if dest.exists() {
            std::fs::remove_dir_all(&dest).map_err(|e| Error::storage("replacing stale batch", e))?;
        }
        std::fs::rename(&tmp, &dest).map_err(|e| Error::storage("publishing batch", e))?;
        Ok(TrainingBatch { dir: dest, manifest, records })
    }

    /// Second half of an export: move the cursor past the batch.
    pub fn commit_export(&self, batch: &TrainingBatch) -> Result<()> {
        let mut s = self.state();
        let mut next = s.clone();
        next.last_exported_event_id = Some(batch.manifest.last_event_id);
        next.last_batch_id = Some(batch.manifest.batch_id.clone());
        self.persist(&next)?;
        *s = next;
        Ok(())
    }

    /// Manifests of every batch on disk, ordered by first event id.
    pub fn list_batches(&self) -> Result<Vec<Manifest>> {
        let mut out = Vec::new();
        let entries = std::fs::read_dir(self.exports_dir()).map_err(|e| Error::storage("listing exports", e))?;
        for entry in entries.flatten() {
            let path = entry.path().join(MANIFEST_FILE);
            if entry.file_name().to_string_lossy().starts_with('.') || !path.is_file() {
                continue;
            }
            let bytes = std::fs::read(&path).map_err(|e| Error::storage("reading manifest", e))?;
            out.push(serde_json::from_slice(&bytes).map_err(|e| Error::storage("parsing manifest", e))?);
        }
        out.sort_by_key(|m: &Manifest| (m.first_event_id, m.last_event_id));
        Ok(out)
    }

    pub fn load_batch(&self, batch_id: &str) -> Result<TrainingBatch> {
        let dir = self.exports_dir().join(batch_id);
        if !dir.is_dir() {
            return Err(Error::NotFound(format!("batch {batch_id}")));
        }
        TrainingBatch::load(&dir)
    }

    fn trainer(&self) -> Result<&Arc<dyn Trainer>> {
        self.trainer.as_ref().ok_or_else(|| Error::TrainerUnreachable("no trainer endpoint configured".into()))
    }

    pub fn submit_update(&self, batch: &TrainingBatch) -> Result<String> {
        let trainer = self.trainer()?;
        if let Some(p) = self.state().pending_job.as_ref().filter(|p| p.status.is_active()) {
            return Err(Error::JobPending(p.job_id.clone()));
        }
        let job_id = trainer.submit(&batch.manifest, &batch.dir)?;
        let mut s = self.state();
        let mut next = s.clone();
        next.pending_job = Some(PendingJob {
            job_id: job_id.clone(),
            batch_id: batch.manifest.batch_id.clone(),
            submitted_at: Utc::now(),
            status: JobStatus::Queued,
        });
        self.persist(&next)?;
        *s = next;
        Ok(job_id)
    }

    /// Query the trainer. A finished or failed job stops being pending; a
    /// failed job's batch stays on disk for resubmission.
    pub fn poll_job(&self, job_id: &str) -> Result<JobReport> {
        let report = self.trainer()?.poll(job_id)?;
        let mut s = self.state();
        let Some(pending) = s.pending_job.clone().filter(|p| p.job_id == job_id) else {
            return Ok(report);
        };
        let mut next = s.clone();
        let updated = PendingJob { status: report.status, ..pending };
        if report.status.is_active() {
            next.pending_job = Some(updated);
        } else {
            next.pending_job = None;
            next.last_job = Some(updated);
        }
        self.persist(&next)?;
        *s = next;
        Ok(report)
    }

    pub fn activate_model(&self, version: &str) -> Result<()> {
        let mut s = self.state();
        let mut next = s.clone();
        next.active_model_version = version.to_owned();
        self.persist(&next)?;
        *s = next;
        if let Some(g) = &self.gateway {
            g.set_model_version(version);
        }
        tracing::info!(version, "activated model");
        Ok(())
    }

    /// Poll the pending job, if any, and activate its model when done.
    pub fn refresh(&self) -> Result<Option<JobReport>> {
        let Some(job_id) = self.state().pending_job.as_ref().map(|p| p.job_id.clone()) else {
            return Ok(None);
        };
        let report = self.poll_job(&job_id)?;
        if report.status == JobStatus::Done {
            if let Some(v) = &report.model_version {
                self.activate_model(v)?;
            }
        }
        Ok(Some(report))
    }

    /// Export, submit and wait (up to `max_polls` polls) for the new model,
    /// then activate it.
    pub fn run_update_cycle(&self, max_polls: u32, poll_interval: std::time::Duration) -> Result<String> {
        let batch = self.export_training_batch()?;
        let job_id = self.submit_update(&batch)?;
        for _ in 0..max_polls.max(1) {
            let report = self.poll_job(&job_id)?;
            match report.status {
                JobStatus::Done => {
                    let version = report
                        .model_version
                        .ok_or_else(|| Error::JobFailed(format!("job {job_id} finished without a model version")))?;
                    self.activate_model(&version)?;
                    return Ok(version);
                }
                JobStatus::Failed => {
                    return Err(Error::JobFailed(report.message.unwrap_or_else(|| format!("job {job_id} failed"))))
                }
                _ => std::thread::sleep(poll_interval),
            }
        }
        Err(Error::JobPending(job_id))
    }
}
