//! One dialogue through the chain of question, answer and feedback, using
//! the scripted mock model.
//!
//! ```text
//! cargo run --example dialogue
//! ```

use image::{Rgb, RgbImage};
use interlearn::app::App;
use interlearn::config::ServiceConfig;
use interlearn::dialogue::OrchestratorAction;
use interlearn::images::encode_png;

fn scene() -> Vec<u8> {
    // an orange "bottle" in the middle of a gray table
    let img = RgbImage::from_fn(96, 96, |x, y| {
        if (24..72).contains(&x) && (24..72).contains(&y) { Rgb([240, 140, 30]) } else { Rgb([90, 90, 90]) }
    });
    encode_png(&image::DynamicImage::ImageRgb8(img)).expect("png")
}

fn say(who: &str, text: &str) {
    println!("{who:>6}: {text}");
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut config = ServiceConfig::default();
    config.storage.data_dir = dir.path().to_path_buf();
    config.storage.sync = false;
    let app = App::build(config)?;
    let orch = &app.orchestrator;

    say("user", "What is that?");
    let (mut session, mut action) = orch.start_session(&scene(), "What is that?")?;
    let mut replies = ["The one in my left hand. What is its name?", "Yes, thank you."].into_iter();
    loop {
        match &action {
            OrchestratorAction::AskClarification { question } => say("robot", question),
            OrchestratorAction::FinalAnswer { text, used_reference, .. } => {
                say("robot", text);
                println!("        (used_reference = {used_reference})");
            }
            OrchestratorAction::SessionClosed { outcome, event_id } => {
                println!("\nsession closed: {outcome:?}, stored as {event_id:?}");
                break;
            }
        }
        let reply = replies.next().expect("scripted replies cover the dialogue");
        say("user", reply);
        action = orch.step(&mut session, reply)?;
    }

    println!("resolved question: {:?}", session.resolved_question);
    println!("subject box:       {:?}", session.query_bbox);
    println!("states:            {:?}", session.state_history);
    println!("events in store:   {}", app.store.count());
    Ok(())
}
