//! A trainer that never trains: accepts batches over the trainer protocol,
//! reports `running` for a few polls and then `done` with a new version.
//!
//! ```text
//! cargo run --example mock_trainer_server -- 127.0.0.1:9200 base+ft1
//! ```

use std::sync::Arc;

use interlearn::update::{trainer_router, MockBehavior, MockTrainer};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let addr = args.next().unwrap_or_else(|| "127.0.0.1:9200".into());
    let version = args.next().unwrap_or_else(|| "base+ft1".into());
    let trainer = MockTrainer::new(MockBehavior::Succeed { version, polls_before_done: 2 });
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    println!("mock trainer on http://{}", listener.local_addr()?);
    axum::serve(listener, trainer_router(Arc::new(trainer)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
