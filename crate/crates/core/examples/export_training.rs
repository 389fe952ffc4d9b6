//! Threshold-triggered export of accumulated events into a training batch,
//! submission to a (mock) trainer and activation of the resulting model.
//!
//! ```text
//! cargo run --example export_training
//! ```

use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use image::{Rgb, RgbImage};
use interlearn::gateway::{embed_image, embed_text, HashEmbedder};
use interlearn::images::{encode_png, ImageStore};
use interlearn::store::{BoundingBox, EventDraft, EventStore};
use interlearn::update::{MockTrainer, TrainingBatch, UpdateManager};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let images = Arc::new(ImageStore::open(dir.path().join("images"))?);
    let store = Arc::new(EventStore::open(dir.path())?);
    let embedder = HashEmbedder::new(32);
    let trainer = Arc::new(MockTrainer::succeeding("base+ft1"));
    let threshold = 5;
    let manager = UpdateManager::open(dir.path(), store.clone(), images.clone(), threshold, "base")?
        .with_trainer(trainer.clone());

    for i in 0..7u8 {
        let png = encode_png(&image::DynamicImage::ImageRgb8(RgbImage::from_pixel(16, 16, Rgb([i * 30, 80, 200]))))?;
        let q = "What is the name of this bottle?";
        store.insert_event(EventDraft {
            image_ref: images.put(&png)?,
            subject_bbox: BoundingBox::FULL,
            question: q.into(),
            answer: format!("Bottle {i}"),
            e_img: embed_image(&png, &embedder)?,
            e_text: embed_text(q, &embedder)?,
            created_at: Utc::now(),
            session_id: format!("s{i}"),
            localization_flagged: false,
        })?;
        println!(
            "event {} stored, {} since export, trigger = {}",
            i + 1,
            manager.events_since_export(),
            manager.check_trigger()
        );
    }

    let version = manager.run_update_cycle(5, Duration::from_millis(10))?;
    let status = manager.status();
    println!("\nactive model: {version}");
    println!("export cursor: {:?}", status.last_exported_event_id);

    let batch = TrainingBatch::load(&manager.exports_dir().join(status.last_batch_id.as_deref().unwrap_or_default()))?;
    println!("batch {} in {}", batch.manifest.batch_id, batch.dir.display());
    println!("{}", serde_json::to_string_pretty(&batch.manifest)?);
    println!("first record: {}", serde_json::to_string(&batch.records[0])?);
    println!("trainer received {} submission(s)", trainer.submissions().len());
    Ok(())
}
