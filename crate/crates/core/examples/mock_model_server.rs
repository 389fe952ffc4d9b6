//! Stand up the hash embedder and the scripted chat model behind the
//! provider HTTP protocol, so the service can run with `kind = "http"`.
//!
//! ```text
//! cargo run --example mock_model_server -- 127.0.0.1:9100 [rules.yaml]
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use interlearn::app::DEFAULT_MOCK_RULES;
use interlearn::gateway::{server, HashEmbedder, ScriptedChat};
use interlearn::images::ImageStore;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let addr = args.next().unwrap_or_else(|| "127.0.0.1:9100".into());
    let chat = match args.next() {
        Some(path) => ScriptedChat::from_file(&PathBuf::from(path))?,
        None => ScriptedChat::from_yaml(DEFAULT_MOCK_RULES)?,
    };
    let scratch = tempfile::tempdir()?;
    let router = server::router(
        Arc::new(HashEmbedder::new(576)),
        Arc::new(chat),
        Arc::new(ImageStore::open(scratch.path())?),
    );
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    println!("mock model server on http://{}", listener.local_addr()?);
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
