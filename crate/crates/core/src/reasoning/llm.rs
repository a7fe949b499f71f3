//! Chat-completion client with a single forced tool call.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{parse_answer, BackendError, ReasoningBackend, ReasoningRequest, ReasoningResponse};

pub const TOOL_NAME: &str = "emit_recovery_plan";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token. Unset variable means
    /// no Authorization header (the bundled stub does not check it).
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub temperature: f64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8089/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 30.0,
            temperature: 0.0,
        }
    }
}

/// JSON schema of the tool arguments.
pub fn tool_schema() -> Value {
    json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["analysis", "output"],
        "properties": {
            "analysis": {
                "type": "object",
                "additionalProperties": false,
                "required": ["immobilized", "cause"],
                "properties": {
                    "immobilized": {"type": "integer", "enum": [0, 1]},
                    "cause": {"type": "string", "enum": ["none", "traffic_control", "yielding", "blocked_ego_lane", "blocked_all_lanes", "unknown"]}
                }
            },
            "output": {
                "anyOf": [
                    {"type": "null"},
                    {
                        "type": "object",
                        "additionalProperties": false,
                        "required": ["behavior_plan", "reason", "route_replanning"],
                        "properties": {
                            "behavior_plan": {
                                "type": "array",
                                "minItems": 1,
                                "items": {"type": "string", "pattern": "^(LaneKeep|LaneChangeLeft|LaneChangeRight|ProceedThrough|Stop|Wait\\([0-9.]+\\)|Reverse\\([0-9.]+\\))$"}
                            },
                            "reason": {"type": "string"},
                            "route_replanning": {"type": "boolean"},
                            "route_start_point": {
                                "type": "object",
                                "required": ["lane", "s"],
                                "properties": {"lane": {"type": "string"}, "s": {"type": "number"}}
                            }
                        }
                    }
                ]
            }
        }
    })
}

fn user_message(req: &ReasoningRequest) -> String {
    let mut msg = format!(
        "{}\n\nAllowed behaviors: {}\n\nObservation:\n{}Map:\n{}",
        req.instructions,
        req.allowed_behaviors.join(", "),
        req.observation_text,
        req.map_digest
    );
    match &req.guidance_text {
        Some(g) => msg.push_str(&format!("Passenger guidance: {g}\n")),
        None => msg.push_str("Passenger guidance: none\n"),
    }
    msg
}

pub fn request_body(cfg: &LlmConfig, req: &ReasoningRequest) -> Value {
    let mut messages = vec![
        json!({"role": "system", "content": req.system_prompt}),
        json!({"role": "user", "content": user_message(req)}),
    ];
    if let Some(c) = &req.correction {
        messages.push(json!({
            "role": "user",
            "content": format!("Your previous answer was rejected: {c}. Call {TOOL_NAME} again with arguments that match the schema."),
        }));
    }
    json!({
        "model": cfg.model,
        "temperature": cfg.temperature,
        "messages": messages,
        "tools": [{
            "type": "function",
            "function": {
                "name": TOOL_NAME,
                "description": "Report whether the vehicle is stuck and the recovery plan.",
                "parameters": tool_schema(),
            }
        }],
        "tool_choice": {"type": "function", "function": {"name": TOOL_NAME}},
    })
}

/// Pulls `choices[0].message.tool_calls[0].function.arguments`.
pub fn extract_arguments(body: &Value) -> Option<&str> {
    body.pointer("/choices/0/message/tool_calls/0/function/arguments")?.as_str()
}

pub struct LlmBackend {
    config: LlmConfig,
    client: reqwest::blocking::Client,
}

impl LlmBackend {
    pub fn new(config: LlmConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs.max(0.001)))
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(Self { config, client })
    }
}

impl ReasoningBackend for LlmBackend {
    fn name(&self) -> &str {
        "llm"
    }

    fn reason(&self, req: &ReasoningRequest) -> Result<ReasoningResponse, BackendError> {
        let mut call = self.client.post(&self.config.endpoint).json(&request_body(&self.config, req));
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Unavailable(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Unavailable(format!("HTTP {status}: {text}")));
        }
        let body: Value = serde_json::from_str(&text).map_err(|e| BackendError::SchemaViolation {
            message: format!("response is not JSON: {e}"),
            raw: text.clone(),
        })?;
        let args = extract_arguments(&body).ok_or_else(|| BackendError::SchemaViolation {
            message: "no tool call in response".into(),
            raw: text.clone(),
        })?;
        let answer = parse_answer(args)?;
        log::debug!("llm answer: {args}");
        Ok(ReasoningResponse { analysis: answer.analysis, output: answer.output, raw: args.to_string(), notes: vec![] })
    }
}
