//! Start the HTTP service on an ephemeral port with mock providers and talk
//! to it the way the web console does.
//!
//! ```text
//! cargo run --example http_service
//! ```

use std::sync::Arc;

use base64::Engine;
use image::{Rgb, RgbImage};
use interlearn::app::App;
use interlearn::config::ServiceConfig;
use interlearn::images::encode_png;
use serde_json::{json, Value};

fn call(agent: &ureq::Agent, method: &str, url: &str, body: Option<Value>) -> Value {
    let mut resp = match (method, body) {
        ("POST", Some(b)) => agent.post(url).send_json(b),
        ("POST", None) => agent.post(url).send_empty(),
        _ => agent.get(url).call(),
    }
    .expect("request");
    let status = resp.status();
    let v: Value = resp.body_mut().read_json().expect("json body");
    println!("{method} {url} -> {status}\n{}\n", serde_json::to_string_pretty(&v).unwrap());
    v
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut config = ServiceConfig::default();
    config.storage.data_dir = dir.path().to_path_buf();
    config.update.threshold = 2;
    let app = Arc::new(App::build(config)?);

    let rt = tokio::runtime::Runtime::new()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let base = format!("http://{}", listener.local_addr()?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = rt.spawn(interlearn::service::serve(app, listener, async {
        let _ = stopped.await;
    }));

    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let img = RgbImage::from_fn(64, 64, |x, y| {
        if (16..48).contains(&x) && (16..48).contains(&y) { Rgb([240, 140, 30]) } else { Rgb([40, 40, 40]) }
    });
    let b64 = base64::engine::general_purpose::STANDARD.encode(encode_png(&image::DynamicImage::ImageRgb8(img))?);

    call(&agent, "GET", &format!("{base}/healthz"), None);
    let start = call(&agent, "POST", &format!("{base}/sessions"), Some(json!({"image_base64": b64, "utterance": "What is that?"})));
    let id = start["session_id"].as_str().unwrap().to_owned();
    call(&agent, "POST", &format!("{base}/sessions/{id}/messages"), Some(json!({"text": "The one in my left hand"})));
    call(&agent, "POST", &format!("{base}/sessions/{id}/messages"), Some(json!({"text": "No, it's Vitamin B6"})));
    call(&agent, "GET", &format!("{base}/sessions/{id}"), None);
    call(&agent, "GET", &format!("{base}/events?limit=10"), None);
    call(&agent, "POST", &format!("{base}/events/search"), Some(json!({"image_base64": b64, "bbox": {"x0": 0.25, "y0": 0.25, "x1": 0.75, "y1": 0.75}, "text": "What is the name of the medicine bottle?"})));
    // one event against a threshold of two: 409 with code threshold_not_reached
    call(&agent, "POST", &format!("{base}/update/trigger"), None);
    call(&agent, "GET", &format!("{base}/update/status"), None);

    let _ = stop.send(());
    rt.block_on(server)??;
    Ok(())
}
