//! Dual-threshold retrieval over a small event store: an event is recalled
//! only if the image crop AND the question are both similar enough.
//!
//! ```text
//! cargo run --example retrieval
//! ```

use chrono::Utc;
use image::{Rgb, RgbImage};
use interlearn::gateway::{embed_image, embed_text, EmbeddingProvider, HashEmbedder};
use interlearn::images::{encode_png, ImageStore};
use interlearn::store::{cosine_similarity, BoundingBox, EventDraft, EventStore, RetrievalConfig};

fn tile(rgb: [u8; 3]) -> Vec<u8> {
    encode_png(&image::DynamicImage::ImageRgb8(RgbImage::from_pixel(32, 32, Rgb(rgb)))).expect("png")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let images = ImageStore::open(dir.path().join("images"))?;
    let embedder = HashEmbedder::new(128);
    let store = EventStore::open(dir.path())?;

    let facts = [
        ([240, 140, 30], "What is the name of this bottle?", "Vitamin B6"),
        ([240, 140, 30], "What color is this bottle?", "orange"),
        ([250, 220, 40], "What is the name of this bottle?", "Vitamin C"),
    ];
    for (i, (rgb, q, a)) in facts.iter().enumerate() {
        let png = tile(*rgb);
        let id = store.insert_event(EventDraft {
            image_ref: images.put(&png)?,
            subject_bbox: BoundingBox::FULL,
            question: q.to_string(),
            answer: a.to_string(),
            e_img: embed_image(&png, &embedder)?,
            e_text: embed_text(q, &embedder)?,
            created_at: Utc::now(),
            session_id: format!("demo-{i}"),
            localization_flagged: false,
        })?;
        println!("stored {id}: {q} -> {a}");
    }
    println!("store: {:?}\n", store.stats());

    let cfg = RetrievalConfig::default();
    println!("thresholds: tau_img {} tau_text {}", cfg.tau_img, cfg.tau_text);
    let queries = [
        ([240, 140, 30], "What is the name of this bottle?"),
        ([240, 140, 30], "What color is this bottle?"),
        ([250, 220, 40], "What is the name of this bottle?"),
        ([10, 10, 200], "What is the name of this bottle?"),
        ([240, 140, 30], "Is this safe for children?"),
    ];
    for (rgb, q) in queries {
        let q_img = embed_image(&tile(rgb), &embedder)?;
        let q_text = embed_text(q, &embedder)?;
        match store.retrieve(&q_img, &q_text, &cfg)? {
            Some(m) => println!(
                "{rgb:?} {q:<36} -> {} (sim_img {:.3}, sim_text {:.3})",
                m.event.answer, m.sim_img, m.sim_text
            ),
            None => println!("{rgb:?} {q:<36} -> no reference"),
        }
    }

    let a = embed_text("What is the name of this bottle?", &embedder)?;
    let b = embed_text("What color is this bottle?", &embedder)?;
    println!(
        "\nmock embeddings of different strings are nearly orthogonal: cos = {:.3} (dim {})",
        cosine_similarity(&a, &b)?,
        embedder.dim()
    );
    Ok(())
}
