//! Runs the HTTP reasoning backend against the bundled stand-in endpoint.
//! Point `LlmConfig::endpoint` at a real chat-completions service to use a
//! hosted model instead.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use unstuck::harness::{load_scenario_file, Episode, EpisodeSettings};
use unstuck::reasoning::stub::{spawn_stub, StubMode};
use unstuck::reasoning::{LlmBackend, LlmConfig};
use unstuck::recovery::Responder;
use unstuck::trace::RecoveryMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stub = spawn_stub(StubMode::Oracle, SocketAddr::from(([127, 0, 0, 1], 0)))?;
    let backend = LlmBackend::new(LlmConfig { endpoint: stub.endpoint(), ..Default::default() })?;
    let sc = load_scenario_file(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/construction.scn"))?;
    let mut ep = Episode::new(&sc, EpisodeSettings::new("llm-example", RecoveryMode::Llm), Some(Responder::Live(Arc::new(backend))), vec![])?;
    let end = ep.run_to_end();
    for line in ep.lines() {
        if let unstuck::trace::TraceLine::Reasoning(r) = line {
            println!("tick {} raw answer: {}", r.request_tick, r.raw.last().map(String::as_str).unwrap_or(""));
        }
    }
    println!("{end:?}; endpoint answered {} calls", stub.calls());
    Ok(())
}
