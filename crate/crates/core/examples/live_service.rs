//! Starts the run service, launches a run, sends passenger guidance and
//! prints the server-sent event stream until the final metrics arrive.

use std::io::{BufRead, BufReader};
use std::net::SocketAddr;

use serde_json::{json, Value};
use unstuck::service::{spawn_service, ServiceConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let svc = spawn_service(ServiceConfig::default(), SocketAddr::from(([127, 0, 0, 1], 0)))?;
    let client = reqwest::blocking::Client::builder().timeout(None).build()?;
    let created: Value = client.post(format!("{}/runs", svc.url())).json(&json!({"scenario": "open_door", "speed": 10.0})).send()?.json()?;
    let id = created["run_id"].as_str().ok_or("no run id")?.to_string();
    println!("started {id} at {}", svc.url());

    let stream = client.get(format!("{}/runs/{id}/stream", svc.url())).send()?;
    let reply: Value = client
        .post(format!("{}/runs/{id}/guidance", svc.url()))
        .json(&json!({"text": "there is an open car door, go around it on the left"}))
        .send()?
        .json()?;
    println!("guidance accepted at t={}", reply["sim_time"]);

    let mut event = String::new();
    let mut frames = 0;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if let Some(e) = line.strip_prefix("event:") {
            event = e.trim().to_string();
        } else if let Some(d) = line.strip_prefix("data:") {
            let data: Value = serde_json::from_str(d.trim())?;
            match event.as_str() {
                "frame" => frames += 1,
                "metrics_final" => {
                    println!("metrics_final after {frames} frames: ds={} success={}", data["ds"], data["success"]);
                    break;
                }
                other => println!("{other}: {data}"),
            }
        }
    }
    Ok(())
}
