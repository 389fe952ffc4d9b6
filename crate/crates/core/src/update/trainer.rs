//! External trainer protocol.
//!
//! ```text
//! POST /train      {"manifest": {...}, "archive_url": "file:///.../batch-dir"} -> {"job_id": "..."}
//! GET  /jobs/{id}  -> {"status": "queued|running|done|failed", "model_version": "...", "message": "..."}
//! ```

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::Manifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_active(self) -> bool {
        matches!(self, JobStatus::Queued | JobStatus::Running)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobReport {
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

pub trait Trainer: Send + Sync {
    fn submit(&self, manifest: &Manifest, batch_dir: &Path) -> Result<String>;
    fn poll(&self, job_id: &str) -> Result<JobReport>;
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainRequest {
    pub manifest: Manifest,
    pub archive_url: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainResponse {
    pub job_id: String,
}

pub struct HttpTrainer {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpTrainer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { endpoint: endpoint.into().trim_end_matches('/').to_owned(), agent }
    }
}

fn unreachable(e: ureq::Error) -> Error {
    Error::TrainerUnreachable(e.to_string())
}

impl Trainer for HttpTrainer {
    fn submit(&self, manifest: &Manifest, batch_dir: &Path) -> Result<String> {
        let abs = std::fs::canonicalize(batch_dir).map_err(|e| Error::storage("resolving batch directory", e))?;
        let body = TrainRequest { manifest: manifest.clone(), archive_url: format!("file://{}", abs.display()) };
        let mut resp = self.agent.post(format!("{}/train", self.endpoint)).send_json(&body).map_err(unreachable)?;
        let r: TrainResponse = resp.body_mut().read_json().map_err(unreachable)?;
        Ok(r.job_id)
    }

    fn poll(&self, job_id: &str) -> Result<JobReport> {
        let url = format!("{}/jobs/{job_id}", self.endpoint);
        match self.agent.get(url).call() {
            Ok(mut resp) => resp.body_mut().read_json().map_err(unreachable),
            Err(ureq::Error::StatusCode(404)) => Err(Error::NotFound(format!("job {job_id}"))),
            Err(e) => Err(unreachable(e)),
        }
    }
}

#[derive(Debug, Clone)]
pub enum MockBehavior {
    /// Report `running` for `polls_before_done` polls, then `done`.
    Succeed { version: String, polls_before_done: u32 },
    Fail { message: String },
}

/// In-process trainer that never trains.
pub struct MockTrainer {
    behavior: Mutex<MockBehavior>,
    jobs: Mutex<HashMap<String, (MockBehavior, u32)>>,
    submissions: Mutex<Vec<Manifest>>,
}

impl MockTrainer {
    pub fn new(behavior: MockBehavior) -> Self {
        Self { behavior: Mutex::new(behavior), jobs: Mutex::default(), submissions: Mutex::default() }
    }

    pub fn succeeding(version: impl Into<String>) -> Self {
        Self::new(MockBehavior::Succeed { version: version.into(), polls_before_done: 0 })
    }

    pub fn failing(message: impl Into<String>) -> Self {
        Self::new(MockBehavior::Fail { message: message.into() })
    }

    /// Applies to jobs submitted from now on.
    pub fn set_behavior(&self, behavior: MockBehavior) {
        *self.behavior.lock().unwrap_or_else(|e| e.into_inner()) = behavior;
    }

    pub fn submissions(&self) -> Vec<Manifest> {
        self.submissions.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl Trainer for MockTrainer {
    fn submit(&self, manifest: &Manifest, _batch_dir: &Path) -> Result<String> {
        let mut subs = self.submissions.lock().unwrap_or_else(|e| e.into_inner());
        subs.push(manifest.clone());
        let job_id = format!("job-{}", subs.len());
        let behavior = self.behavior.lock().unwrap_or_else(|e| e.into_inner()).clone();
        self.jobs.lock().unwrap_or_else(|e| e.into_inner()).insert(job_id.clone(), (behavior, 0));
        Ok(job_id)
    }

    fn poll(&self, job_id: &str) -> Result<JobReport> {
        let mut jobs = self.jobs.lock().unwrap_or_else(|e| e.into_inner());
        let (behavior, polls) = jobs.get_mut(job_id).ok_or_else(|| Error::NotFound(format!("job {job_id}")))?;
        *polls += 1;
        Ok(match behavior {
            MockBehavior::Succeed { version, polls_before_done } if *polls > *polls_before_done => {
                JobReport { status: JobStatus::Done, model_version: Some(version.clone()), message: None }
            }
            MockBehavior::Succeed { .. } => JobReport { status: JobStatus::Running, model_version: None, message: None },
            MockBehavior::Fail { message } => {
                JobReport { status: JobStatus::Failed, model_version: None, message: Some(message.clone()) }
            }
        })
    }
}

/// Serve any [`Trainer`] over the trainer protocol.
pub fn trainer_router(trainer: Arc<dyn Trainer>) -> Router {
    Router::new()
        .route("/train", post(train))
        .route("/jobs/{id}", get(job))
        .with_state(trainer)
}

type Reply<T> = std::result::Result<Json<T>, (StatusCode, String)>;

async fn train(State(t): State<Arc<dyn Trainer>>, Json(req): Json<TrainRequest>) -> Reply<TrainResponse> {
    let dir = req.archive_url.strip_prefix("file://").unwrap_or(&req.archive_url).to_owned();
    let job_id = tokio::task::spawn_blocking(move || t.submit(&req.manifest, Path::new(&dir)))
        .await
        .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| (StatusCode::BAD_GATEWAY, e.to_string()))?;
    Ok(Json(TrainResponse { job_id }))
}

async fn job(State(t): State<Arc<dyn Trainer>>, UrlPath(id): UrlPath<String>) -> Reply<JobReport> {
    let report = tokio::task::spawn_blocking(move || t.poll(&id))
        .await
        .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    match report {
        Ok(r) => Ok(Json(r)),
        Err(e @ Error::NotFound(_)) => Err((StatusCode::NOT_FOUND, e.to_string())),
        Err(e) => Err((StatusCode::BAD_GATEWAY, e.to_string())),
    }
}
