//! Local stand-in for a chat-completion endpoint, for contract tests and
//! offline runs of the HTTP backend.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

use super::llm::TOOL_NAME;
use super::oracle::RuleOracle;
use super::{ReasoningRequest, WireAnswer};

#[derive(Debug, Clone, PartialEq)]
pub enum StubMode {
    /// Always answers with these tool arguments.
    Fixed(Value),
    /// First call returns unparseable arguments, later calls the given ones.
    MalformedThenValid(Value),
    /// Sleeps before answering.
    Sleep { seconds: f64, answer: Value },
    /// Rebuilds the request from the prompt and runs the rule oracle on it.
    Oracle,
}

struct StubState {
    mode: StubMode,
    calls: Arc<AtomicUsize>,
}

fn completion(arguments: String) -> Value {
    json!({
        "id": "stub-1",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "finish_reason": "tool_calls",
            "message": {
                "role": "assistant",
                "content": null,
                "tool_calls": [{
                    "id": "call_0",
                    "type": "function",
                    "function": {"name": TOOL_NAME, "arguments": arguments}
                }]
            }
        }]
    })
}

fn section<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let rest = &text[from..];
    Some(rest.find(end).map_or(rest, |i| &rest[..i]))
}

/// Inverse of the client's user message layout.
fn request_from_messages(body: &Value) -> Option<ReasoningRequest> {
    let msgs = body.get("messages")?.as_array()?;
    let user = msgs.iter().find(|m| m["role"] == "user")?["content"].as_str()?;
    let guidance = section(user, "Passenger guidance: ", "\n")?.trim();
    Some(ReasoningRequest {
        system_prompt: String::new(),
        instructions: String::new(),
        observation_text: section(user, "Observation:\n", "Map:\n")?.to_string(),
        guidance_text: (guidance != "none").then(|| guidance.to_string()),
        allowed_behaviors: vec![],
        map_digest: section(user, "Map:\n", "Passenger guidance:")?.to_string(),
        correction: None,
    })
}

async fn chat(State(state): State<Arc<StubState>>, Json(body): Json<Value>) -> Json<Value> {
    let n = state.calls.fetch_add(1, Ordering::SeqCst);
    let args = match &state.mode {
        StubMode::Fixed(v) => v.to_string(),
        StubMode::MalformedThenValid(v) => {
            if n == 0 {
                "{\"analysis\": {\"immobilized\": \"maybe\"".to_string()
            } else {
                v.to_string()
            }
        }
        StubMode::Sleep { seconds, answer } => {
            tokio::time::sleep(Duration::from_secs_f64(*seconds)).await;
            answer.to_string()
        }
        StubMode::Oracle => match request_from_messages(&body) {
            Some(req) => {
                let (analysis, output, _) = RuleOracle::default().decide(&req);
                serde_json::to_string(&WireAnswer { analysis, output }).unwrap_or_default()
            }
            None => "{}".to_string(),
        },
    };
    Json(completion(args))
}

pub fn router(mode: StubMode, calls: Arc<AtomicUsize>) -> Router {
    Router::new()
        .route("/v1/chat/completions", post(chat))
        .with_state(Arc::new(StubState { mode, calls }))
}

/// A stub running on its own runtime thread; stops on drop.
pub struct StubHandle {
    pub addr: SocketAddr,
    calls: Arc<AtomicUsize>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl StubHandle {
    pub fn endpoint(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Drop for StubHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (use port 0 for any free port) and serves in the background.
pub fn spawn_stub(mode: StubMode, addr: SocketAddr) -> std::io::Result<StubHandle> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let calls = Arc::new(AtomicUsize::new(0));
    let app = router(mode, calls.clone());
    let (tx, rx) = oneshot::channel::<()>();
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let listener = match tokio::net::TcpListener::from_std(std_listener) {
                Ok(l) => l,
                Err(e) => {
                    log::error!("stub listener: {e}");
                    return;
                }
            };
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        // sleeping handlers would otherwise hold the runtime open
        rt.shutdown_timeout(Duration::from_millis(100));
    });
    Ok(StubHandle { addr, calls, shutdown: Some(tx), thread: Some(thread) })
}
