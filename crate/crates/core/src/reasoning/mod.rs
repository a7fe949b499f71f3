//! Reasoning backends: a deterministic rule oracle and an HTTP chat-completion
//! client, both behind [`ReasoningBackend`].

pub mod latency;
pub mod llm;
pub mod oracle;
pub mod prompt;
pub mod stub;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::av::Behavior;
use crate::recovery::{AnalysisResult, PlanError, RecoveryPlan, SolverOutput};
use crate::world::LaneGraph;

pub use latency::LatencyModel;
pub use llm::{LlmBackend, LlmConfig};
pub use oracle::RuleOracle;
pub use prompt::Prompts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningRequest {
    pub system_prompt: String,
    /// Step-by-step instruction block.
    pub instructions: String,
    pub observation_text: String,
    pub guidance_text: Option<String>,
    pub allowed_behaviors: Vec<String>,
    pub map_digest: String,
    /// Set on the retry after a malformed answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningResponse {
    pub analysis: AnalysisResult,
    pub output: SolverOutput,
    /// Verbatim backend payload.
    pub raw: String,
    /// Backend-side events such as `guidance_rejected`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ReasoningResponse {
    pub fn validate(&self, graph: Option<&LaneGraph>) -> Result<(), PlanError> {
        self.analysis.validate()?;
        if let Some(plan) = &self.output {
            if self.analysis.immobilized != 1 {
                return Err(PlanError::OutputWithoutImmobilization);
            }
            plan.validate(graph)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("schema violation: {message}")]
    SchemaViolation { message: String, raw: String },
}

/// Anything that can turn a request into a response. Must be callable from
/// a worker thread.
pub trait ReasoningBackend: Send + Sync {
    fn name(&self) -> &str;
    fn reason(&self, req: &ReasoningRequest) -> Result<ReasoningResponse, BackendError>;
}

pub fn allowed_behaviors() -> Vec<String> {
    Behavior::catalog().iter().map(|b| match b {
        Behavior::Wait { .. } => "Wait(<seconds>)".to_string(),
        Behavior::Reverse { .. } => "Reverse(<metres, at most 10>)".to_string(),
        b => b.token(),
    })
    .collect()
}

/// Structured answer both backends produce; also the tool-call argument schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireAnswer {
    pub analysis: AnalysisResult,
    #[serde(default)]
    pub output: Option<RecoveryPlan>,
}

/// Parses a JSON answer, tolerating a surrounding markdown code fence.
pub fn parse_answer(raw: &str) -> Result<WireAnswer, BackendError> {
    let trimmed = raw.trim();
    let body = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"))
        .unwrap_or(trimmed);
    let de = &mut serde_json::Deserializer::from_str(body);
    serde_path_to_error::deserialize(de).map_err(|e| BackendError::SchemaViolation {
        message: format!("{} at {}", e.inner(), e.path()),
        raw: raw.to_string(),
    })
}

/// Candidate lanes and start points near the ego, as `key=value` lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MapDigest {
    pub ego_lane: String,
    pub ego_s: f64,
    pub left: Option<(String, f64)>,
    pub right: Option<(String, f64)>,
    pub route_lane: String,
    /// How far the route continues in the ego's lane corridor (m).
    pub route_ahead_in_lane: f64,
}

impl fmt::Display for MapDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ego_lane={} ego_s={:.1}", self.ego_lane, self.ego_s)?;
        for (side, n) in [("left", &self.left), ("right", &self.right)] {
            match n {
                Some((lane, s)) => writeln!(f, "{side}_lane={lane} {side}_start={s:.1}")?,
                None => writeln!(f, "{side}_lane=none")?,
            }
        }
        writeln!(f, "route_lane={} route_ahead_in_lane={:.1}", self.route_lane, self.route_ahead_in_lane)
    }
}

impl MapDigest {
    /// Lenient parse; missing keys fall back to defaults.
    pub fn parse(text: &str) -> MapDigest {
        let kv: BTreeMap<&str, &str> = text.split_whitespace().filter_map(|t| t.split_once('=')).collect();
        let num = |k: &str| kv.get(k).and_then(|v| v.parse::<f64>().ok()).unwrap_or(0.0);
        let side = |side: &str| match kv.get(format!("{side}_lane").as_str()) {
            Some(&"none") | None => None,
            Some(lane) => Some((lane.to_string(), num(&format!("{side}_start")))),
        };
        MapDigest {
            ego_lane: kv.get("ego_lane").unwrap_or(&"").to_string(),
            ego_s: num("ego_s"),
            left: side("left"),
            right: side("right"),
            route_lane: kv.get("route_lane").unwrap_or(&"").to_string(),
            route_ahead_in_lane: num("route_ahead_in_lane"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_roundtrip() {
        let d = MapDigest {
            ego_lane: "R2".into(),
            ego_s: 12.5,
            left: Some(("L2".into(), 12.5)),
            right: None,
            route_lane: "R2".into(),
            route_ahead_in_lane: 80.0,
        };
        assert_eq!(MapDigest::parse(&d.to_string()), d);
    }

    #[test]
    fn answer_parsing() {
        let raw = "```json\n{\"analysis\":{\"immobilized\":1,\"cause\":\"blocked_ego_lane\"},\"output\":{\"behavior_plan\":[\"LaneChangeLeft\"],\"reason\":\"x\",\"route_replanning\":false}}\n```";
        let a = parse_answer(raw).unwrap();
        assert_eq!(a.output.unwrap().behavior_plan, vec![Behavior::LaneChangeLeft]);
        let err = parse_answer(r#"{"analysis":{"immobilized":1,"cause":"bogus"}}"#).unwrap_err();
        assert!(matches!(err, BackendError::SchemaViolation { .. }));
    }
}
