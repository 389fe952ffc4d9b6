//! Parameterized chat model for the simulator.
//!
//! Knows the ground truth for every scene it is shown and lies with a
//! configurable probability that depends on the active model version.
//! Every random draw is seeded from the script seed, the session id and a
//! purpose label, so replies do not depend on call order.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::script::{Attribute, CatalogObject, SimScript};
use crate::dialogue::templates;
use crate::error::{Error, Result};
use crate::gateway::{ChatProvider, ChatRequest};
use crate::images::ImageRef;
use crate::store::BoundingBox;

/// What the simulator placed in a stored scene image.
#[derive(Debug, Clone)]
pub struct SceneInfo {
    pub object: usize,
    pub bbox: BoundingBox,
    pub session_id: String,
}

pub fn rng_for(seed: u64, key: &str, purpose: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    h.update([0]);
    h.update(purpose.as_bytes());
    let d = h.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(d[..8].try_into().expect("8 bytes")))
}

pub struct SimChat {
    script: Arc<SimScript>,
    scenes: RwLock<HashMap<ImageRef, SceneInfo>>,
}

fn last_user_line(transcript: &str) -> &str {
    transcript.lines().rev().find_map(|l| l.strip_prefix("User: ")).unwrap_or("")
}

impl SimChat {
    pub fn new(script: Arc<SimScript>) -> Self {
        Self { script, scenes: RwLock::default() }
    }

    pub fn register(&self, image: ImageRef, info: SceneInfo) {
        self.scenes.write().unwrap_or_else(|e| e.into_inner()).insert(image, info);
    }

    fn scene(&self, req: &ChatRequest) -> Result<SceneInfo> {
        let image = req.images.first().ok_or_else(|| Error::BadRequest("simulated model needs an image".into()))?;
        self.scenes
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(image)
            .cloned()
            .ok_or_else(|| Error::BadRequest(format!("unknown scene {image}")))
    }

    fn binding<'a>(req: &'a ChatRequest, key: &str) -> &'a str {
        req.bindings.get(key).map(String::as_str).unwrap_or("")
    }

    fn error_rate(&self, model: &str) -> f64 {
        if model == self.script.updated_model {
            self.script.rounds.round3_error_rate
        } else {
            self.script.rounds.round1_error_rate
        }
    }

    /// The model's own belief: the truth, or with probability `error_rate`
    /// the same attribute of another object.
    fn believe(&self, req: &ChatRequest, scene: &SceneInfo, attr: Attribute) -> String {
        let catalog = &self.script.catalog;
        let truth = catalog[scene.object].value(attr);
        let mut rng = rng_for(self.script.seed, &scene.session_id, &format!("belief/{attr}"));
        if !rng.random_bool(self.error_rate(&req.model)) {
            return truth.to_owned();
        }
        let wrong: Vec<&CatalogObject> = catalog.iter().filter(|o| o.value(attr) != truth).collect();
        if wrong.is_empty() {
            return "I am not sure".to_owned();
        }
        wrong[rng.random_range(0..wrong.len())].value(attr).to_owned()
    }

    fn bbox_line(b: &BoundingBox) -> String {
        format!("BBOX: {},{},{},{}", b.x0, b.y0, b.x1, b.y1)
    }
}

impl ChatProvider for SimChat {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        let scene = self.scene(req)?;
        let transcript = Self::binding(req, "transcript");
        let reply = match req.template_id.as_str() {
            templates::CLARIFY => match Attribute::detect(last_user_line(transcript)) {
                Some(a) => format!("CLEAR: {}", a.canonical_question()),
                None => "ASK: What would you like to know about the object you are holding?".to_owned(),
            },
            templates::FINALIZE => {
                let a = transcript
                    .lines()
                    .filter_map(|l| l.strip_prefix("User: "))
                    .find_map(Attribute::detect)
                    .unwrap_or(Attribute::Name);
                format!("CLEAR: {}", a.canonical_question())
            }
            templates::LOCALIZE => Self::bbox_line(&scene.bbox),
            templates::ANSWER_PLAIN | templates::ANSWER_WITH_REFERENCE => {
                let attr = Attribute::detect(Self::binding(req, "question")).unwrap_or(Attribute::Name);
                let reference = Self::binding(req, "reference_a");
                let follow = req.template_id == templates::ANSWER_WITH_REFERENCE
                    && !reference.is_empty()
                    && rng_for(self.script.seed, &scene.session_id, "fidelity").random_bool(self.script.reference_fidelity);
                if follow {
                    reference.to_owned()
                } else {
                    self.believe(req, &scene, attr)
                }
            }
            templates::FEEDBACK_CLASSIFY => {
                let feedback = Self::binding(req, "feedback").trim();
                match feedback.strip_prefix("No, it's ") {
                    Some(rest) => format!("CORRECT: {}", rest.trim_end_matches('.')),
                    None if feedback.starts_with("Yes") => "CONFIRM".to_owned(),
                    None => "UNKNOWN".to_owned(),
                }
            }
            templates::DISTILL => {
                let question = Self::binding(req, "question");
                let b = &scene.bbox;
                format!(
                    "Q: {question} | BBOX: {},{},{},{} | A: {}",
                    b.x0,
                    b.y0,
                    b.x1,
                    b.y1,
                    Self::binding(req, "answer")
                )
            }
            other => return Err(Error::BadRequest(format!("simulated model has no behavior for template `{other}`"))),
        };
        Ok(reply)
    }
}
