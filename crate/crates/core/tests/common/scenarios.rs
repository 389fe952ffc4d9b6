//! End-to-end checks shared by the focused test files and the acceptance
//! runner. Each returns `Err` with a diagnostic instead of panicking so the
//! runner can report every criterion.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use interlearn::dialogue::{DialogueConfig, OrchestratorAction, SessionState, Speaker};
use interlearn::distill::{crop_rect, crop_subject};
use interlearn::gateway::{ChatProvider, ChatRequest};
use interlearn::images::ImageStore;
use interlearn::sim::{run_rounds, SimRun, SimScript};
use interlearn::store::{cosine_similarity, BoundingBox, EventId, EventStore, StoreOptions};
use interlearn::update::{should_update, UpdateManager};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::{oracle_trial, property_trial, scalar_cos};
use super::{bottle_png, default_chat, emb, oracle_crop, random_draft, rig, rig_with, solid_png};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn e2s(e: impl std::fmt::Display) -> String {
    e.to_string()
}

pub fn shipped_script_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/three_rounds.yaml")
}

// retrieval

/// Randomized stores of 1 to 500 events with thresholds anywhere in [0, 1].
fn trial_params(trials: usize) -> Vec<(u64, usize, f64, f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..trials)
        .map(|_| {
            (
                rng.random(),
                rng.random_range(1..=500),
                rng.random_range(0.0..=1.0),
                rng.random_range(0.0..=1.0),
                rng.random_range(0.0..=0.5),
                rng.random_range(0.0..=0.5),
            )
        })
        .collect()
}

pub fn retrieval_oracle(trials: usize) -> Check {
    let started = Instant::now();
    for (seed, n, ti, tt, _, _) in trial_params(trials) {
        oracle_trial(seed, n, ti, tt)?;
    }
    let took = started.elapsed();
    ensure!(took < Duration::from_secs(60), "{trials} trials took {took:?}");
    Ok(())
}

pub fn retrieval_properties(trials: usize) -> Check {
    for (seed, n, ti, tt, ri, rt) in trial_params(trials) {
        property_trial(seed, n, ti, tt, ri, rt)?;
    }
    Ok(())
}

pub fn cosine_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = super::random_unit(&mut rng, 32);
    let c = cosine_similarity(&v, &v).map_err(e2s)?;
    ensure!((c - 1.0).abs() <= 1e-9, "identity gave {c}");

    let mut a = vec![0.0f32; 32];
    let mut b = vec![0.0f32; 32];
    a[0] = 1.0;
    b[1] = 1.0;
    let c = cosine_similarity(&emb(&a), &emb(&b)).map_err(e2s)?;
    ensure!(c.abs() <= 1e-9, "orthogonal gave {c}");

    let c = cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[1.0, 1.0])).map_err(e2s)?;
    let exact = 1.0 / 2f64.sqrt();
    ensure!((c - exact).abs() <= 1e-9, "(1,0)·(1,1)/√2 gave {c}, expected {exact}");
    ensure!((c - scalar_cos(&[1.0, 0.0], &[1.0, 1.0])).abs() <= 1e-9, "scalar oracle disagrees");
    // the printed constant 0.70710678 is truncated; it agrees to 1.2e-9
    ensure!((c - 0.70710678).abs() <= 5e-9, "{c} is not 0.70710678");
    Ok(())
}

// dialogue

/// A model that never stops asking.
pub fn always_ask() -> Arc<dyn ChatProvider> {
    Arc::new(|r: &ChatRequest| -> interlearn::Result<String> {
        Ok(match r.template_id.as_str() {
            "clarify" => "ASK: And which one is that?".into(),
            "finalize" => "CLEAR: What is this object?".into(),
            "localize" => "BBOX: 0.25,0.25,0.75,0.75".into(),
            "answer_plain" | "answer_with_reference" => "It is a bottle.".into(),
            "feedback_classify" => "UNKNOWN".into(),
            "distill" => "Q: What is this object? | BBOX: 0.25,0.25,0.75,0.75 | A: a bottle".into(),
            _ => String::new(),
        })
    })
}

/// Exactly `max` clarifications, then a forced final answer.
pub fn termination(max: u32) -> Check {
    let r = rig_with(
        always_ask(),
        DialogueConfig { max_clarification_rounds: max, ..DialogueConfig::default() },
        Default::default(),
    );
    let (mut s, mut action) = r.orchestrator.start_session(&bottle_png(), "What is that?").map_err(e2s)?;
    let mut asks = 0;
    for _ in 0..=max + 1 {
        match &action {
            OrchestratorAction::AskClarification { .. } => {
                asks += 1;
                ensure!(s.clarification_round <= max, "round {} exceeds {max}", s.clarification_round);
                action = r.orchestrator.step(&mut s, "this one").map_err(e2s)?;
            }
            OrchestratorAction::FinalAnswer { .. } => break,
            other => return Err(format!("unexpected {other:?}")),
        }
    }
    ensure!(matches!(action, OrchestratorAction::FinalAnswer { .. }), "no final answer after {asks} asks");
    ensure!(asks == max, "{asks} clarifications for max {max}");
    ensure!(s.clarification_round == max, "round counter {}", s.clarification_round);
    ensure!(s.state == SessionState::AwaitingFeedback, "state {}", s.state);
    ensure!(s.resolved_question.as_deref() == Some("What is this object?"), "resolved {:?}", s.resolved_question);
    Ok(())
}

/// Wrong answer, correction, distillation, then a repeat of the same query
/// answered from the stored correction.
pub fn correction_loop() -> Check {
    let r = rig(default_chat());
    let o = &r.orchestrator;
    let image = bottle_png();

    let (mut s1, a) = o.start_session(&image, "What is that?").map_err(e2s)?;
    ensure!(matches!(a, OrchestratorAction::AskClarification { .. }), "first turn {a:?}");
    let a = o.step(&mut s1, "The one in my left hand").map_err(e2s)?;
    let OrchestratorAction::FinalAnswer { text, used_reference, .. } = a else {
        return Err(format!("expected a final answer, got {a:?}"));
    };
    ensure!(!used_reference && text.contains("Vitamin B1"), "first answer {text:?} used_reference {used_reference}");
    let before = r.store.count();
    let a = o.step(&mut s1, "No, it's Vitamin B6").map_err(e2s)?;
    let OrchestratorAction::SessionClosed { event_id: Some(id), .. } = a else {
        return Err(format!("correction did not store an event: {a:?}"));
    };
    ensure!(r.store.count() == before + 1, "store count {} -> {}", before, r.store.count());
    let event = r.store.get_event(id).map_err(e2s)?;
    ensure!(event.answer == "Vitamin B6", "stored answer {:?}", event.answer);

    let (mut s2, _) = o.start_session(&image, "What is that?").map_err(e2s)?;
    let a = o.step(&mut s2, "The one in my left hand").map_err(e2s)?;
    let OrchestratorAction::FinalAnswer { text, used_reference, reference } = a else {
        return Err(format!("expected a final answer, got {a:?}"));
    };
    ensure!(used_reference, "repeat query did not use the stored event");
    ensure!(text.contains("Vitamin B6"), "repeat answer {text:?}");
    let reference = reference.ok_or("missing reference")?;
    ensure!(reference.event_id == id && reference.answer == "Vitamin B6", "reference {reference:?}");
    ensure!(r.store.count() == before + 1, "repeat query changed the store");
    Ok(())
}

// simulation

pub fn load_shipped_script() -> Result<SimScript, String> {
    SimScript::load(&shipped_script_path()).map_err(e2s)
}

pub fn sim_trend(run: &SimRun) -> Check {
    let acc: Vec<f64> = run.reports.iter().map(|r| r.accuracy).collect();
    ensure!(acc.len() == 3, "{} rounds", acc.len());
    ensure!(acc[0] < acc[1] && acc[1] <= acc[2], "accuracies {acc:?} are not increasing");
    let (r1, r2) = (&run.reports[0], &run.reports[1]);
    for (object, a1) in &r1.per_object {
        let corrected = run
            .dialogues
            .iter()
            .any(|d| d.round == 1 && &d.object == object && d.stored && !d.correct);
        if corrected {
            let a2 = r2.per_object[object];
            ensure!(a2 >= *a1, "object {object}: round 2 {a2} < round 1 {a1}");
        }
    }
    Ok(())
}

pub fn sim_forced() -> Check {
    let mut script = load_shipped_script()?;
    script.rounds.round1_error_rate = 1.0;
    script.reference_fidelity = 1.0;
    let run = run_rounds(&script).map_err(e2s)?;
    let (r1, r2) = (&run.reports[0], &run.reports[1]);
    ensure!(r1.accuracy == 0.0, "round 1 accuracy {}", r1.accuracy);
    ensure!(r2.accuracy == 1.0, "round 2 accuracy {}", r2.accuracy);
    for d in &run.dialogues {
        match d.round {
            1 => ensure!(!d.correct && !d.used_reference && d.stored, "round 1 dialogue {} {d:?}", d.session_id),
            2 => ensure!(d.correct && d.used_reference && d.answer == d.expected, "round 2 dialogue {} {d:?}", d.session_id),
            _ => {}
        }
    }
    Ok(())
}

pub fn sim_deterministic(a: &SimRun, b: &SimRun) -> Check {
    ensure!(a.reports == b.reports, "reports differ between runs");
    ensure!(a.dialogues == b.dialogues, "dialogue rows differ between runs");
    let ja = serde_json::to_string(&a.reports).map_err(e2s)?;
    let jb = serde_json::to_string(&b.reports).map_err(e2s)?;
    ensure!(ja == jb, "serialized reports differ");
    Ok(())
}

// update

struct UpdateRig {
    dir: tempfile::TempDir,
    store: Arc<EventStore>,
    images: Arc<ImageStore>,
    png: Vec<u8>,
}

impl UpdateRig {
    fn new() -> Result<Self, String> {
        let dir = tempfile::tempdir().map_err(e2s)?;
        let images = Arc::new(ImageStore::open(dir.path().join("images")).map_err(e2s)?);
        let store = Arc::new(
            EventStore::open_with(dir.path(), StoreOptions { sync: false, ..StoreOptions::default() }).map_err(e2s)?,
        );
        let png = solid_png(4, 4, [1, 2, 3]);
        images.put(&png).map_err(e2s)?;
        Ok(Self { dir, store, images, png })
    }

    fn manager(&self, threshold: usize) -> Result<UpdateManager, String> {
        UpdateManager::open(self.dir.path(), self.store.clone(), self.images.clone(), threshold, "base").map_err(e2s)
    }

    fn insert(&self, rng: &mut ChaCha8Rng, i: usize) -> Result<EventId, String> {
        let mut d = random_draft(rng, 8, i);
        d.image_ref = self.images.put(&self.png).map_err(e2s)?;
        self.store.insert_event(d).map_err(e2s)
    }
}

pub fn trigger_exactness() -> Check {
    ensure!(!should_update(99, 100) && should_update(100, 100) && !should_update(0, 1), "should_update examples");
    let rig = UpdateRig::new()?;
    let m = rig.manager(100)?;
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for i in 1..=100 {
        ensure!(!m.check_trigger(), "trigger fired before insert {i}");
        rig.insert(&mut rng, i)?;
    }
    ensure!(m.check_trigger(), "trigger did not fire on the 100th insert");
    let batch = m.export_training_batch().map_err(e2s)?;
    ensure!(batch.manifest.record_count == 100 && batch.records.len() == 100, "batch of {}", batch.records.len());
    ensure!(!m.check_trigger(), "trigger still firing after export");
    Ok(())
}

/// 250 inserts with an export whenever the trigger fires, then the
/// remainder flushed by a manager configured with a lower threshold.
pub fn export_partition() -> Check {
    let rig = UpdateRig::new()?;
    let mut rng = ChaCha8Rng::seed_from_u64(250);
    let mut batches = Vec::new();
    {
        let m = rig.manager(100)?;
        for i in 1..=250 {
            rig.insert(&mut rng, i)?;
            if m.check_trigger() {
                batches.push(m.export_training_batch().map_err(e2s)?);
            }
        }
        ensure!(batches.len() == 2, "{} exports over 250 inserts", batches.len());
        ensure!(m.events_since_export() == 50, "{} events pending", m.events_since_export());
        ensure!(m.export_training_batch().is_err(), "export below threshold succeeded");
    }
    batches.push(rig.manager(50)?.export_training_batch().map_err(e2s)?);

    let mut expected = 1u64;
    let mut total = 0;
    for b in &batches {
        let ids: Vec<u64> = b.records.iter().map(|r| r.event_id.0).collect();
        let want: Vec<u64> = (expected..expected + ids.len() as u64).collect();
        ensure!(ids == want, "batch {} covers {:?}..", b.manifest.batch_id, ids.first());
        ensure!(b.manifest.first_event_id.0 == expected, "manifest range of {}", b.manifest.batch_id);
        ensure!(b.manifest.last_event_id.0 == expected + ids.len() as u64 - 1, "manifest range of {}", b.manifest.batch_id);
        for r in &b.records {
            ensure!(b.dir.join(&r.image).is_file(), "{} missing from {}", r.image, b.manifest.batch_id);
        }
        expected += ids.len() as u64;
        total += ids.len();
    }
    ensure!(total == 250, "batches hold {total} records");
    ensure!(batches.iter().map(|b| b.records.len()).collect::<Vec<_>>() == [100, 100, 50], "sizes");
    Ok(())
}

/// A crash after the batch directory is written but before the cursor
/// moves re-exports the same events under the same batch id.
pub fn crash_reexport() -> Check {
    let rig = UpdateRig::new()?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 1..=100 {
        rig.insert(&mut rng, i)?;
    }
    let first = {
        let m = rig.manager(100)?;
        m.write_batch().map_err(e2s)?
        // dropped before commit_export
    };
    let m = rig.manager(100)?;
    ensure!(m.events_since_export() == 100, "cursor moved without a commit");
    let again = m.export_training_batch().map_err(e2s)?;
    ensure!(again.manifest.batch_id == first.manifest.batch_id, "{} vs {}", again.manifest.batch_id, first.manifest.batch_id);
    ensure!(again.records == first.records, "re-exported records differ");
    ensure!(m.events_since_export() == 0, "cursor not advanced after the retry");
    let on_disk = m.list_batches().map_err(e2s)?;
    ensure!(on_disk.len() == 1, "{} batch directories", on_disk.len());
    Ok(())
}

// crop

pub fn crop_examples() -> Check {
    let b = BoundingBox::new(0.1, 0.2, 0.5, 0.6, 1e-4).map_err(e2s)?;
    let r = crop_rect(1000, 800, &b).map_err(e2s)?;
    ensure!(r == (100, 160, 400, 320), "1000x800 crop {r:?}");
    let img = image::DynamicImage::new_rgb8(1000, 800);
    let c = crop_subject(&img, &b).map_err(e2s)?;
    ensure!((c.width(), c.height()) == (400, 320), "cropped image {}x{}", c.width(), c.height());

    let full = crop_rect(37, 23, &BoundingBox::FULL).map_err(e2s)?;
    ensure!(full == (0, 0, 37, 23), "full crop {full:?}");

    let tiny = BoundingBox::new(0.0, 0.0, 0.1, 0.1, 1e-4).map_err(e2s)?;
    match crop_rect(3, 3, &tiny) {
        Err(interlearn::Error::DegenerateCrop { width: 0, .. }) => {}
        other => return Err(format!("3x3 crop gave {other:?}")),
    }
    ensure!(oracle_crop(3, 3, &tiny).is_none(), "oracle disagrees on the 3x3 case");
    Ok(())
}

pub fn random_bbox(rng: &mut impl Rng) -> BoundingBox {
    loop {
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        let (c, d): (f64, f64) = (rng.random(), rng.random());
        if let Ok(bbox) = BoundingBox::new(a.min(b), c.min(d), a.max(b), c.max(d), 0.0) {
            return bbox;
        }
    }
}

pub fn crop_geometry(pairs: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..pairs {
        let (w, h) = (rng.random_range(1..=2000), rng.random_range(1..=2000));
        let bbox = random_bbox(&mut rng);
        let got = crop_rect(w, h, &bbox).ok();
        let want = oracle_crop(w, h, &bbox);
        ensure!(got == want, "{w}x{h} {bbox:?}: {got:?} vs oracle {want:?}");
    }
    Ok(())
}

// durability

pub const DURABILITY_SEED: u64 = 200;
pub const DURABILITY_EVENTS: usize = 200;

/// Write the durability corpus with the default (fsync) options.
pub fn durability_write(dir: &Path) -> Check {
    let store = EventStore::open(dir).map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(DURABILITY_SEED);
    for i in 0..DURABILITY_EVENTS {
        store.insert_event(random_draft(&mut rng, 16, i)).map_err(e2s)?;
    }
    Ok(())
}

/// Reopen after the writer died and compare against a regenerated corpus.
pub fn durability_verify(dir: &Path) -> Check {
    let store = EventStore::open(dir).map_err(e2s)?;
    ensure!(store.count() == DURABILITY_EVENTS, "count {} after restart", store.count());
    let mut rng = ChaCha8Rng::seed_from_u64(DURABILITY_SEED);
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    for i in 0..DURABILITY_EVENTS {
        let want = random_draft(&mut rng, 16, i);
        let got = store.get_event(EventId(i as u64 + 1)).map_err(e2s)?;
        ensure!(bits(got.e_img.values()) == bits(want.e_img.values()), "e_img of event {} differs", i + 1);
        ensure!(bits(got.e_text.values()) == bits(want.e_text.values()), "e_text of event {} differs", i + 1);
        ensure!(
            got.question == want.question && got.answer == want.answer && got.created_at == want.created_at,
            "payload of event {} differs",
            i + 1
        );
    }
    Ok(())
}

/// Transcript speakers and texts, for order checks.
pub fn transcript_pairs(s: &interlearn::dialogue::DialogueSession) -> Vec<(Speaker, String)> {
    s.transcript.iter().map(|t| (t.speaker, t.text.clone())).collect()
}
