//! Three-round desk simulation of the learning loop with scripted
//! participants and a parameterized model.
//!
//! * Round 1: retrieval off, base model. Every wrong answer is corrected by
//!   the participant and distilled into an event; right answers are
//!   confirmed and stored too.
//! * Round 2: retrieval on over everything stored so far, base model.
//! * Round 3: the accumulated events are exported and handed to a mock
//!   trainer whose "fine-tuned" model has the round-3 error rate; retrieval
//!   off again.
//!
//! Participants always correct with the ground truth.

mod chat;
mod report;
mod scene;
mod script;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;

use crate::dialogue::templates::Templates;
use crate::dialogue::{DialogueConfig, Orchestrator, OrchestratorAction, Outcome};
use crate::distill::Distiller;
use crate::error::{Error, Result};
use crate::gateway::{Gateway, HashEmbedder};
use crate::images::{self, ImageStore};
use crate::store::{EventStore, StoreOptions, DEFAULT_MIN_BBOX_AREA};
use crate::update::{MockTrainer, UpdateManager};

pub use chat::{rng_for, SceneInfo, SimChat};
pub use report::{read_jsonl, render_table, write_jsonl, DialogueRow, ReportLine, RoundReport};
pub use scene::{scene, tile, SCENE_SIZE, TILE_SIZE};
pub use script::{Attribute, CatalogObject, RoundPolicy, SimScript};

pub const VAGUE_OPENING: &str = "What is that?";

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub reports: Vec<RoundReport>,
    pub dialogues: Vec<DialogueRow>,
}

/// Run all three rounds in a fresh temporary directory.
pub fn run_rounds(script: &SimScript) -> Result<SimRun> {
    let dir = tempfile::tempdir().map_err(|e| Error::storage("creating simulation directory", e))?;
    run_rounds_in(script, dir.path())
}

struct World {
    script: Arc<SimScript>,
    chat: Arc<SimChat>,
    gateway: Arc<Gateway>,
    store: Arc<EventStore>,
    images: Arc<ImageStore>,
    templates: Arc<Templates>,
    nonce: u32,
}

/// Run all three rounds with state kept under `dir`, which must not hold
/// events from an earlier run.
pub fn run_rounds_in(script: &SimScript, dir: &Path) -> Result<SimRun> {
    script.validate()?;
    let script = Arc::new(script.clone());
    let images = Arc::new(ImageStore::open(dir.join("images"))?);
    let store = Arc::new(EventStore::open_with(dir, StoreOptions { min_bbox_area: DEFAULT_MIN_BBOX_AREA, sync: false })?);
    if store.count() > 0 {
        return Err(Error::ScriptInvalid(format!("{} already holds events", dir.display())));
    }
    let chat = Arc::new(SimChat::new(script.clone()));
    let gateway = Arc::new(Gateway::new(
        Arc::new(HashEmbedder::new(script.embedding_dim)),
        chat.clone(),
        images.clone(),
        script.base_model.clone(),
    ));
    let update = UpdateManager::open(dir, store.clone(), images.clone(), 1, &script.base_model)?
        .with_trainer(Arc::new(MockTrainer::succeeding(script.updated_model.clone())))
        .with_gateway(gateway.clone());
    let mut world = World { script, chat, gateway, store, images, templates: Arc::new(Templates::default()), nonce: 0 };

    let mut reports = Vec::new();
    let mut dialogues = Vec::new();
    for round in 1..=3u32 {
        if round == 3 {
            let version = update.run_update_cycle(3, Duration::ZERO)?;
            tracing::info!(version, "simulated model update");
        }
        let retrieval = round == 2 && world.script.rounds.round2_retrieval;
        let model = world.gateway.model_version();
        let rows = world.run_round(round, retrieval)?;
        reports.push(RoundReport::from_rows(round, retrieval, &model, &rows, world.store.count()));
        dialogues.extend(rows);
    }
    world.store.flush()?;
    Ok(SimRun { reports, dialogues })
}

fn follow_up(attr: Attribute) -> &'static str {
    match attr {
        Attribute::Name => "I want to know its name.",
        Attribute::Color => "I want to know its color.",
        Attribute::Use => "I want to know what it is used for.",
    }
}

impl World {
    fn orchestrator(&self, retrieval: bool) -> Orchestrator {
        let config = DialogueConfig {
            max_clarification_rounds: self.script.max_clarification_rounds,
            retrieval: self.script.retrieval,
            retrieval_enabled: retrieval,
            min_bbox_area: DEFAULT_MIN_BBOX_AREA,
        };
        let distiller = Distiller::new(
            self.gateway.clone(),
            self.store.clone(),
            self.templates.clone(),
            None,
            DEFAULT_MIN_BBOX_AREA,
        );
        Orchestrator::new(self.gateway.clone(), self.store.clone(), self.templates.clone(), distiller, config)
    }

    fn run_round(&mut self, round: u32, retrieval: bool) -> Result<Vec<DialogueRow>> {
        let orch = self.orchestrator(retrieval);
        let script = self.script.clone();
        let mut rows = Vec::with_capacity(script.dialogues_per_round());
        for p in 0..script.participants {
            for (index, object) in script.catalog.iter().enumerate() {
                for &attr in &script.attributes {
                    rows.push(self.dialogue(&orch, round, p, index, object, attr)?);
                }
            }
        }
        Ok(rows)
    }

    fn dialogue(
        &mut self,
        orch: &Orchestrator,
        round: u32,
        participant: u32,
        index: usize,
        object: &CatalogObject,
        attr: Attribute,
    ) -> Result<DialogueRow> {
        let session_id = format!("r{round}-p{participant:03}-{}-{attr}", object.id);
        let mut rng = rng_for(self.script.seed, &session_id, "participant");
        let positions = scene::positions();
        let (gx, gy) = (rng.random_range(0..positions), rng.random_range(0..positions));
        let bg = rng.random_range(0..=255u8);
        self.nonce += 1;
        let (img, bbox) = scene(index as u8, object.rgb, gx, gy, bg, self.nonce);
        let png = images::encode_png(&img)?;
        let image_ref = self.images.put(&png)?;
        self.chat.register(image_ref, SceneInfo { object: index, bbox, session_id: session_id.clone() });

        let opening = if rng.random_bool(self.script.vague_opening_rate) {
            VAGUE_OPENING
        } else {
            attr.specific_request()
        };
        let truth = object.value(attr);
        let (mut session, mut action) = orch.start_session_with_id(Some(session_id.clone()), &png, opening)?;
        let mut answer = None;
        // one step per clarification, one for the answer, one for feedback
        for _ in 0..self.script.max_clarification_rounds + 3 {
            action = match action {
                OrchestratorAction::AskClarification { .. } => orch.step(&mut session, follow_up(attr))?,
                OrchestratorAction::FinalAnswer { text, .. } => {
                    let feedback = if text == truth { "Yes, that's right.".to_owned() } else { format!("No, it's {truth}.") };
                    answer = Some(text);
                    orch.step(&mut session, &feedback)?
                }
                OrchestratorAction::SessionClosed { .. } => break,
            };
        }
        let answer = answer.ok_or_else(|| Error::InvalidState {
            expected: "a final answer",
            actual: format!("{session_id} ended in {}", session.state),
        })?;
        Ok(DialogueRow {
            round,
            session_id,
            participant,
            object: object.id.clone(),
            attribute: attr,
            opening: opening.to_owned(),
            resolved_question: session.resolved_question.clone().unwrap_or_default(),
            expected: truth.to_owned(),
            correct: answer == truth,
            answer,
            used_reference: session.used_reference,
            clarification_rounds: session.clarification_round,
            outcome: session.outcome,
            stored: session.event_id.is_some()
                && matches!(session.outcome, Some(Outcome::Confirmed) | Some(Outcome::Corrected)),
        })
    }
}
