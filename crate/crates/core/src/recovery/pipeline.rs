//! One reasoning invocation: request assembly, backend call, validation,
//! a single retry on malformed output, and the trace record.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::guidance::GuidanceMessage;
use crate::reasoning::{allowed_behaviors, BackendError, Prompts, ReasoningBackend, ReasoningRequest};
use crate::world::LaneGraph;

use super::observation::{serialize_observation, SceneObservation};
use super::{AnalysisResult, SolverOutput};

/// Whether the passenger-guidance branch or the autonomous checks ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Guided,
    Autonomous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub request_tick: u64,
    /// Tick the response was delivered; `None` if the run ended first.
    pub delivered_tick: Option<u64>,
    pub branch: Branch,
    pub backend: String,
    pub prompt_hash: String,
    pub observation: String,
    pub map_digest: String,
    pub guidance: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub superseded_guidance: Vec<String>,
    pub analysis: Option<AnalysisResult>,
    pub output: SolverOutput,
    /// Verbatim backend payload per attempt.
    pub raw: Vec<String>,
    pub retry_count: u32,
    pub error: Option<String>,
    /// Backend remarks such as `guidance_rejected`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// What happened at delivery: `applied`, `stale_plan: ..`, `replan_failed: ..`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<String>,
    pub plan_id: Option<u64>,
}

impl TraceRecord {
    /// A plan was installed on the vehicle.
    pub fn intervened(&self) -> bool {
        self.plan_id.is_some()
    }
}

/// Everything besides the observation that the request needs.
#[derive(Clone)]
pub struct PipelineContext {
    pub tick: u64,
    pub map_digest: String,
    pub graph: Arc<LaneGraph>,
    pub prompts: Arc<Prompts>,
}

pub fn build_request(obs: &SceneObservation, ctx: &PipelineContext, guidance: Option<&GuidanceMessage>) -> ReasoningRequest {
    ReasoningRequest {
        system_prompt: ctx.prompts.system.clone(),
        instructions: ctx.prompts.instructions.clone(),
        observation_text: serialize_observation(obs),
        guidance_text: guidance.map(|g| g.text.clone()),
        allowed_behaviors: allowed_behaviors(),
        map_digest: ctx.map_digest.clone(),
        correction: None,
    }
}

/// Runs the backend and validates its answer. Returns exactly one of no
/// intervention or a valid plan, plus the trace record.
pub fn run_pipeline(
    obs: &SceneObservation,
    ctx: &PipelineContext,
    guidance: Option<&GuidanceMessage>,
    backend: &dyn ReasoningBackend,
) -> (SolverOutput, TraceRecord) {
    let mut req = build_request(obs, ctx, guidance);
    let mut record = TraceRecord {
        request_tick: ctx.tick,
        delivered_tick: None,
        branch: if guidance.is_some() { Branch::Guided } else { Branch::Autonomous },
        backend: backend.name().to_string(),
        prompt_hash: ctx.prompts.hash(),
        observation: req.observation_text.clone(),
        map_digest: req.map_digest.clone(),
        guidance: req.guidance_text.clone(),
        superseded_guidance: vec![],
        analysis: None,
        output: None,
        raw: vec![],
        retry_count: 0,
        error: None,
        notes: vec![],
        events: vec![],
        plan_id: None,
    };
    if obs.ego.destination_flag {
        record.error = Some("invoked at destination".into());
        return (None, record);
    }
    for attempt in 0..2 {
        record.retry_count = attempt;
        let violation = match backend.reason(&req) {
            Err(BackendError::Unavailable(msg)) => {
                log::warn!("reasoning backend unavailable at tick {}: {msg}", ctx.tick);
                record.error = Some(format!("backend unavailable: {msg}"));
                return (None, record);
            }
            Err(BackendError::SchemaViolation { message, raw }) => {
                record.raw.push(raw);
                message
            }
            Ok(resp) => {
                record.raw.push(resp.raw.clone());
                match resp.validate(Some(&ctx.graph)) {
                    Ok(()) => {
                        record.analysis = Some(resp.analysis);
                        record.notes = resp.notes;
                        record.output = resp.output.clone();
                        record.error = None;
                        return (resp.output, record);
                    }
                    Err(e) => e.to_string(),
                }
            }
        };
        log::warn!("schema violation at tick {} (attempt {}): {violation}", ctx.tick, attempt + 1);
        record.error = Some(format!("schema violation: {violation}"));
        req.correction = Some(violation);
    }
    (None, record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoning::{ReasoningResponse, RuleOracle};
    use crate::recovery::observation::{EgoObs, TrafficControlObs};
    use crate::recovery::{Cause, RecoveryPlan};
    use std::sync::Mutex;

    struct Scripted(Mutex<Vec<Result<ReasoningResponse, BackendError>>>);

    impl ReasoningBackend for Scripted {
        fn name(&self) -> &str {
            "scripted"
        }

        fn reason(&self, _: &ReasoningRequest) -> Result<ReasoningResponse, BackendError> {
            self.0.lock().unwrap().remove(0)
        }
    }

    fn ctx() -> PipelineContext {
        let graph = LaneGraph::from_specs(&[]).unwrap();
        PipelineContext { tick: 7, map_digest: String::new(), graph: Arc::new(graph), prompts: Arc::new(Prompts::default()) }
    }

    fn obs() -> SceneObservation {
        SceneObservation {
            ego: EgoObs { speed: 0.0, stationary_timer: 2.0, destination_flag: false, lane: "C".into(), route_remaining: 50.0 },
            tc: TrafficControlObs::default(),
            tp: vec![],
        }
    }

    fn wait_plan() -> ReasoningResponse {
        ReasoningResponse {
            analysis: AnalysisResult::stuck(Cause::Unknown),
            output: Some(RecoveryPlan {
                behavior_plan: vec![crate::av::Behavior::Wait { duration: 5.0 }],
                reason: "r".into(),
                route_replanning: false,
                route_start_point: None,
            }),
            raw: "ok".into(),
            notes: vec![],
        }
    }

    #[test]
    fn one_retry_then_none() {
        let bad = || Err(BackendError::SchemaViolation { message: "bad".into(), raw: "x".into() });
        let backend = Scripted(Mutex::new(vec![bad(), Ok(wait_plan())]));
        let (out, rec) = run_pipeline(&obs(), &ctx(), None, &backend);
        assert!(out.is_some());
        assert_eq!(rec.retry_count, 1);
        assert_eq!(rec.raw, vec!["x".to_string(), "ok".to_string()]);

        let backend = Scripted(Mutex::new(vec![bad(), bad(), Ok(wait_plan())]));
        let (out, rec) = run_pipeline(&obs(), &ctx(), None, &backend);
        assert!(out.is_none());
        assert!(rec.error.unwrap().contains("schema violation"));
    }

    #[test]
    fn invalid_plan_counts_as_violation() {
        let mut bad = wait_plan();
        bad.analysis = AnalysisResult::not_stuck(Cause::None);
        let backend = Scripted(Mutex::new(vec![Ok(bad.clone()), Ok(bad)]));
        let (out, rec) = run_pipeline(&obs(), &ctx(), None, &backend);
        assert!(out.is_none());
        assert_eq!(rec.retry_count, 1);
    }

    #[test]
    fn unavailable_fails_closed() {
        let backend = Scripted(Mutex::new(vec![Err(BackendError::Unavailable("timeout".into()))]));
        let (out, rec) = run_pipeline(&obs(), &ctx(), None, &backend);
        assert!(out.is_none());
        assert_eq!(rec.retry_count, 0);
    }

    #[test]
    fn branch_follows_guidance() {
        let g = GuidanceMessage {
            run_id: "r".into(),
            received: 1.0,
            text: "wait".into(),
            source: crate::guidance::GuidanceSource::Cli,
        };
        let (_, rec) = run_pipeline(&obs(), &ctx(), Some(&g), &RuleOracle::default());
        assert_eq!(rec.branch, Branch::Guided);
        assert_eq!(rec.guidance.as_deref(), Some("wait"));
        let (_, rec) = run_pipeline(&obs(), &ctx(), None, &RuleOracle::default());
        assert_eq!(rec.branch, Branch::Autonomous);
    }
}
