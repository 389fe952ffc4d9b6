//! The learning loop end to end: the model names the wrong vitamin, the
//! user corrects it, the correction is distilled into an event, and the
//! next time the same question comes up the answer is built on that event.
//!
//! ```text
//! cargo run --example correction_loop
//! ```

use image::{Rgb, RgbImage};
use interlearn::app::App;
use interlearn::config::ServiceConfig;
use interlearn::dialogue::{Orchestrator, OrchestratorAction};
use interlearn::images::encode_png;

fn scene() -> Vec<u8> {
    let img = RgbImage::from_fn(96, 96, |x, y| {
        if (24..72).contains(&x) && (24..72).contains(&y) { Rgb([240, 140, 30]) } else { Rgb([60, 60, 70]) }
    });
    encode_png(&image::DynamicImage::ImageRgb8(img)).expect("png")
}

/// Run a dialogue, feeding `feedback` once an answer arrives.
fn converse(orch: &Orchestrator, image: &[u8], feedback: &str) -> Result<(), interlearn::Error> {
    let (mut session, mut action) = orch.start_session(image, "What is that?")?;
    println!("  user:  What is that?");
    loop {
        action = match action {
            OrchestratorAction::AskClarification { question } => {
                println!("  robot: {question}");
                let reply = "The one in my left hand, what is it called?";
                println!("  user:  {reply}");
                orch.step(&mut session, reply)?
            }
            OrchestratorAction::FinalAnswer { text, used_reference, reference } => {
                println!("  robot: {text}");
                if let Some(r) = reference {
                    println!(
                        "         recalled {} \"{}\" -> \"{}\" (sim_img {:.3}, sim_text {:.3})",
                        r.event_id, r.question, r.answer, r.sim_img, r.sim_text
                    );
                }
                println!("         used_reference = {used_reference}");
                println!("  user:  {feedback}");
                orch.step(&mut session, feedback)?
            }
            OrchestratorAction::SessionClosed { outcome, event_id } => {
                println!("  -> {outcome:?}, event {event_id:?}");
                return Ok(());
            }
        }
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut config = ServiceConfig::default();
    config.storage.data_dir = dir.path().to_path_buf();
    config.storage.sync = false;
    let app = App::build(config)?;
    let image = scene();

    println!("first encounter (store holds {} events)", app.store.count());
    converse(&app.orchestrator, &image, "No, it's Vitamin B6.")?;

    println!("\nsecond encounter (store holds {} events)", app.store.count());
    converse(&app.orchestrator, &image, "Yes, that's right.")?;

    let first = app.store.list_events(0, 1).remove(0);
    println!("\nstored event {}: {:?} -> {:?}", first.event_id, first.question, first.answer);
    Ok(())
}
