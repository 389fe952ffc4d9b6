#![allow(dead_code)]

pub mod oracles;
pub mod scenarios;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use image::{DynamicImage, Rgb, RgbImage};
use interlearn::app::{App, DEFAULT_MOCK_RULES};
use interlearn::config::ServiceConfig;
use interlearn::dialogue::templates::Templates;
use interlearn::dialogue::{DialogueConfig, Orchestrator};
use interlearn::distill::Distiller;
use interlearn::gateway::{ChatProvider, ChatRequest, Embedding, Gateway, HashEmbedder, ScriptedChat};
use interlearn::images::{encode_png, ImageRef, ImageStore};
use interlearn::store::{BoundingBox, EventDraft, EventStore, StoreOptions, DEFAULT_MIN_BBOX_AREA};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

pub const DIM: usize = 32;
pub const TAG: &str = "test-tag";

pub fn png(img: RgbImage) -> Vec<u8> {
    encode_png(&DynamicImage::ImageRgb8(img)).unwrap()
}

pub fn solid_png(w: u32, h: u32, rgb: [u8; 3]) -> Vec<u8> {
    png(RgbImage::from_pixel(w, h, Rgb(rgb)))
}

/// 64x64 dark scene with an orange 32x32 square in the middle, i.e. exactly
/// the region `0.25,0.25,0.75,0.75` the default mock rules localize.
pub fn bottle_png() -> Vec<u8> {
    png(RgbImage::from_fn(64, 64, |x, y| {
        if (16..48).contains(&x) && (16..48).contains(&y) {
            Rgb([240, 140, 30])
        } else {
            Rgb([40, 40, 40])
        }
    }))
}

/// Same orange square, different surroundings and position-independent crop.
pub fn bottle_png_other_background() -> Vec<u8> {
    png(RgbImage::from_fn(64, 64, |x, y| {
        if (16..48).contains(&x) && (16..48).contains(&y) {
            Rgb([240, 140, 30])
        } else {
            Rgb([10, 90, 10])
        }
    }))
}

pub fn dummy_ref() -> ImageRef {
    format!("{}.png", "0".repeat(64)).parse().unwrap()
}

pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
        if let Ok(e) = Embedding::normalized(v, TAG) {
            return e;
        }
    }
}

pub fn emb(values: &[f32]) -> Embedding {
    Embedding::normalized(values.to_vec(), TAG).unwrap()
}

pub fn at(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(1_700_000_000 + secs, 0).unwrap()
}

pub fn draft(e_img: Embedding, e_text: Embedding, session: &str, created_at: DateTime<Utc>) -> EventDraft {
    EventDraft {
        image_ref: dummy_ref(),
        subject_bbox: BoundingBox::FULL,
        question: format!("What is the name of the object in {session}?"),
        answer: format!("answer {session}"),
        e_img,
        e_text,
        created_at,
        session_id: session.to_owned(),
        localization_flagged: false,
    }
}

pub fn random_draft(rng: &mut impl Rng, dim: usize, i: usize) -> EventDraft {
    let (a, b) = (random_unit(rng, dim), random_unit(rng, dim));
    draft(a, b, &format!("s{i}"), at(i as i64))
}

/// Hash-projection embedding computed from first principles: SHA-256 of
/// `domain || payload`, the low 8 digest bytes seed ChaCha8, standard-normal
/// draws are normalized in double precision.
pub fn oracle_embedding(domain: &[u8], payload: &[u8], dim: usize) -> Vec<f64> {
    let digest: [u8; 32] = Sha256::new().chain_update(domain).chain_update(payload).finalize().into();
    let mut seed = [0u8; 8];
    seed.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(seed));
    let raw: Vec<f64> = (0..dim).map(|_| f64::from(rng.sample::<f64, _>(StandardNormal) as f32)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.into_iter().map(|v| v / norm).collect()
}

pub fn default_chat() -> Arc<ScriptedChat> {
    Arc::new(ScriptedChat::from_yaml(DEFAULT_MOCK_RULES).unwrap())
}

/// An orchestrator over a fresh on-disk store with the hash embedder.
pub struct Rig {
    pub dir: TempDir,
    pub images: Arc<ImageStore>,
    pub store: Arc<EventStore>,
    pub gateway: Arc<Gateway>,
    pub orchestrator: Orchestrator,
}

pub fn rig_with(chat: Arc<dyn ChatProvider>, config: DialogueConfig, templates: Templates) -> Rig {
    let dir = tempfile::tempdir().unwrap();
    let images = Arc::new(ImageStore::open(dir.path().join("images")).unwrap());
    let store = Arc::new(
        EventStore::open_with(dir.path(), StoreOptions { min_bbox_area: DEFAULT_MIN_BBOX_AREA, sync: false }).unwrap(),
    );
    let gateway = Arc::new(Gateway::new(Arc::new(HashEmbedder::new(DIM)), chat, images.clone(), "base"));
    let templates = Arc::new(templates);
    let distiller = Distiller::new(gateway.clone(), store.clone(), templates.clone(), None, config.min_bbox_area);
    let orchestrator = Orchestrator::new(gateway.clone(), store.clone(), templates, distiller, config);
    Rig { dir, images, store, gateway, orchestrator }
}

pub fn rig(chat: Arc<dyn ChatProvider>) -> Rig {
    rig_with(chat, DialogueConfig::default(), Templates::default())
}

/// Delegates to an inner provider after a fixed delay.
pub struct SlowChat<C> {
    pub inner: C,
    pub delay: Duration,
}

impl<C: ChatProvider> ChatProvider for SlowChat<C> {
    fn complete(&self, request: &ChatRequest) -> interlearn::Result<String> {
        std::thread::sleep(self.delay);
        self.inner.complete(request)
    }
}

pub fn test_config(dir: &Path) -> ServiceConfig {
    let mut config = ServiceConfig::default();
    config.storage.data_dir = dir.to_path_buf();
    config.storage.sync = false;
    config.embedding.dim = DIM;
    config
}

/// A service bound to an ephemeral port, stopped on drop.
pub struct Server {
    pub base: String,
    pub app: Arc<App>,
    rt: tokio::runtime::Runtime,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    handle: Option<tokio::task::JoinHandle<interlearn::Result<()>>>,
}

impl Server {
    pub fn start(app: App) -> Self {
        let app = Arc::new(app);
        let rt = tokio::runtime::Runtime::new().unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let handle = rt.spawn(interlearn::service::serve(app.clone(), listener, async {
            let _ = stopped.await;
        }));
        Server { base, app, rt, stop: Some(stop), handle: Some(handle) }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(h) = self.handle.take() {
            // never panic here: this also runs while unwinding from a failed test
            if let Ok(Err(e)) = self.rt.block_on(h) {
                eprintln!("server stopped with error: {e}");
            }
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

/// Serve a router on an ephemeral port from a background runtime; returns
/// the base URL and the runtime keeping it alive.
pub fn serve_router(router: axum::Router) -> (String, tokio::runtime::Runtime) {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    rt.spawn(async move { axum::serve(listener, router).await });
    (base, rt)
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

pub fn get(agent: &ureq::Agent, url: &str) -> (u16, Value) {
    let mut resp = agent.get(url).call().unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap_or(Value::Null))
}

pub fn post(agent: &ureq::Agent, url: &str, body: Value) -> (u16, Value) {
    let mut resp = agent.post(url).send_json(body).unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap_or(Value::Null))
}

pub fn post_empty(agent: &ureq::Agent, url: &str) -> (u16, Value) {
    let mut resp = agent.post(url).send_empty().unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap_or(Value::Null))
}

pub fn b64(bytes: &[u8]) -> String {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

/// Reference crop rectangle: each edge `v * size` rounded half up and kept
/// inside the image. `None` when either side is empty.
pub fn oracle_crop(w: u32, h: u32, b: &BoundingBox) -> Option<(u32, u32, u32, u32)> {
    fn edge(v: f64, size: u32) -> i64 {
        let scaled = v * f64::from(size);
        let mut r = scaled.trunc() as i64;
        if scaled - r as f64 >= 0.5 {
            r += 1;
        }
        r.clamp(0, i64::from(size))
    }
    let (x0, x1) = (edge(b.x0, w), edge(b.x1, w));
    let (y0, y1) = (edge(b.y0, h), edge(b.y1, h));
    let (cw, ch) = (x1 - x0, y1 - y0);
    (cw > 0 && ch > 0).then(|| (x0 as u32, y0 as u32, cw as u32, ch as u32))
}
