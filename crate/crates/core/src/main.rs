use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use base64::Engine;
use clap::{Parser, Subcommand};

use interlearn::app::App;
use interlearn::config::ServiceConfig;
use interlearn::dialogue::OrchestratorAction;
use interlearn::service::{ErrorBody, EventSummary, StartSession, StepResponse};
use interlearn::store::EventId;

#[derive(Parser)]
#[command(name = "interlearn", version, about = "Interactive visual question answering that learns from corrections")]
struct Cli {
    /// TOML config file; every key can be overridden with INTERLEARN_* variables.
    #[arg(long, global = true, env = "INTERLEARN_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve,
    /// Talk to a running service from the terminal.
    Chat {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        url: String,
        /// Scene image to ask about.
        #[arg(long)]
        image: PathBuf,
    },
    /// Inspect the event store.
    Db {
        #[command(subcommand)]
        command: DbCommand,
    },
    /// Export the events accumulated since the last export as a training batch.
    ExportTraining {
        /// Also submit the batch to the configured trainer.
        #[arg(long)]
        submit: bool,
    },
    /// Simulation harness.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
}

#[derive(Subcommand)]
enum DbCommand {
    /// Event count, embedding dimension, provider tag and export cursor.
    Stats,
    /// Print one event as JSON.
    Show {
        event_id: String,
        /// Include the embedding vectors.
        #[arg(long)]
        embeddings: bool,
    },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run all three rounds of a script and print the accuracy table.
    Run {
        script: PathBuf,
        /// JSON-lines report with one row per round and per dialogue.
        #[arg(long, default_value = "sim_report.jsonl")]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ServiceConfig> {
    Ok(ServiceConfig::load(path)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Serve => {
            let config = load_config(cli.config.as_deref())?;
            let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
            rt.block_on(interlearn::service::run(config))?;
        }
        Command::Chat { url, image } => chat(&url, &image)?,
        Command::Db { command } => {
            let app = App::build(load_config(cli.config.as_deref())?)?;
            match command {
                DbCommand::Stats => {
                    let stats = app.store.stats();
                    let status = app.update.status();
                    println!("count: {}", stats.count);
                    println!("dim: {}", stats.dim.map_or("-".into(), |d| d.to_string()));
                    println!("provider_tag: {}", stats.provider_tag.as_deref().unwrap_or("-"));
                    println!("last_event_id: {}", stats.last_event_id.map_or("-".into(), |i| i.to_string()));
                    println!(
                        "last_exported_event_id: {}",
                        status.last_exported_event_id.map_or("-".into(), |i| i.to_string())
                    );
                    println!("events_since_export: {} / {}", status.events_since_export, status.threshold);
                    println!("active_model_version: {}", status.active_model_version);
                }
                DbCommand::Show { event_id, embeddings } => {
                    let id: EventId = event_id.parse()?;
                    let event = app.store.get_event(id)?;
                    let json = if embeddings {
                        serde_json::to_string_pretty(&event)?
                    } else {
                        serde_json::to_string_pretty(&EventSummary::from(&event))?
                    };
                    println!("{json}");
                }
            }
        }
        Command::ExportTraining { submit } => {
            let app = App::build(load_config(cli.config.as_deref())?)?;
            let batch = app.update.export_training_batch()?;
            println!(
                "exported {} ({} records, {} .. {}) to {}",
                batch.manifest.batch_id,
                batch.manifest.record_count,
                batch.manifest.first_event_id,
                batch.manifest.last_event_id,
                batch.dir.display()
            );
            if submit {
                let job = app.update.submit_update(&batch)?;
                println!("submitted job {job}");
            }
        }
        Command::Sim { command: SimCommand::Run { script, out } } => {
            let script = interlearn::sim::SimScript::load(&script)?;
            let run = interlearn::sim::run_rounds(&script)?;
            print!("{}", interlearn::sim::render_table(&run.reports));
            interlearn::sim::write_jsonl(&out, &run.reports, &run.dialogues)?;
            println!("\nreport: {}", out.display());
        }
    }
    Ok(())
}

fn print_action(resp: &StepResponse) -> bool {
    match &resp.action {
        OrchestratorAction::AskClarification { question } => println!("robot> {question}"),
        OrchestratorAction::FinalAnswer { text, used_reference, reference } => {
            println!("robot> {text}");
            if let (true, Some(r)) = (used_reference, reference) {
                println!(
                    "       (recalled {}: \"{}\" -> \"{}\", sim_img {:.3}, sim_text {:.3})",
                    r.event_id, r.question, r.answer, r.sim_img, r.sim_text
                );
            }
            println!("       is that right? answer yes, or tell me the correct answer");
        }
        OrchestratorAction::SessionClosed { outcome, event_id } => {
            match event_id {
                Some(id) => println!("robot> thanks, remembered as {id} ({outcome:?})"),
                None => println!("robot> session closed ({outcome:?})"),
            }
            return false;
        }
    }
    true
}

fn post<B: serde::Serialize>(agent: &ureq::Agent, url: &str, body: &B) -> anyhow::Result<StepResponse> {
    let mut resp = agent.post(url).send_json(body).with_context(|| format!("calling {url}"))?;
    if !resp.status().is_success() {
        let status = resp.status();
        match resp.body_mut().read_json::<ErrorBody>() {
            Ok(e) => bail!("{} ({}): {}", e.error.code, status, e.error.message),
            Err(_) => bail!("{url} returned {status}"),
        }
    }
    Ok(resp.body_mut().read_json()?)
}

fn chat(url: &str, image: &Path) -> anyhow::Result<()> {
    let url = url.trim_end_matches('/');
    let bytes = std::fs::read(image).with_context(|| format!("reading {}", image.display()))?;
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    let mut prompt = || -> anyhow::Result<Option<String>> {
        print!("you> ");
        std::io::stdout().flush()?;
        Ok(lines.next().transpose()?)
    };

    let Some(first) = prompt()? else { return Ok(()) };
    let start = StartSession {
        image_base64: base64::engine::general_purpose::STANDARD.encode(&bytes),
        utterance: first,
        session_id: None,
    };
    let resp = post(&agent, &format!("{url}/sessions"), &start)?;
    let session = resp.session_id.clone();
    if !print_action(&resp) {
        return Ok(());
    }
    while let Some(line) = prompt()? {
        if line.trim().is_empty() {
            continue;
        }
        let resp = post(&agent, &format!("{url}/sessions/{session}/messages"), &serde_json::json!({ "text": line }))?;
        if !print_action(&resp) {
            break;
        }
    }
    Ok(())
}
