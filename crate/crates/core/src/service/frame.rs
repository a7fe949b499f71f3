//! Per-tick snapshot streamed to clients, and the other stream events.

use serde::{Deserialize, Serialize};

use crate::guidance::GuidanceMessage;
use crate::harness::Episode;
use crate::metrics::RunMetrics;
use crate::recovery::{AnalysisResult, RecoveryPlan, SolverStatus, TraceRecord};
use crate::world::ActorKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoFrame {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub behavior: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorFrame {
    pub id: String,
    pub kind: ActorKind,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub half_length: f64,
    pub half_width: f64,
    #[serde(default)]
    pub door_open: bool,
    #[serde(default)]
    pub traversable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightFrame {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub run_id: String,
    pub tick: u64,
    pub t: f64,
    pub ego: EgoFrame,
    /// Every non-ego actor.
    pub actors: Vec<ActorFrame>,
    pub lights: Vec<LightFrame>,
    /// Active route polyline.
    pub route: Vec<[f64; 2]>,
    /// The active route came from a recovery replan.
    pub route_replanned: bool,
    pub status: SolverStatus,
    pub analysis: Option<AnalysisResult>,
}

pub fn route_polyline(ep: &Episode) -> Vec<[f64; 2]> {
    ep.stack().route().points().iter().map(|p| [p.x, p.y]).collect()
}

impl Frame {
    /// Snapshot of the state the last `step` acted on.
    pub fn capture(ep: &Episode, route_replanned: bool) -> Frame {
        let world = ep.world();
        let ego = world.ego().expect("episode has an ego");
        let behavior = ep.last_output().map_or_else(|| "LaneKeep".to_string(), |o| o.decision.behavior.token());
        Frame {
            run_id: ep.header().run_id.clone(),
            tick: world.tick,
            t: world.t(),
            ego: EgoFrame { x: ego.pose.x, y: ego.pose.y, heading: ego.pose.heading, speed: ego.speed, behavior },
            actors: world
                .actors
                .iter()
                .filter(|a| a.kind != ActorKind::Ego)
                .map(|a| ActorFrame {
                    id: a.id.clone(),
                    kind: a.kind,
                    x: a.pose.x,
                    y: a.pose.y,
                    heading: a.pose.heading,
                    speed: a.speed,
                    half_length: a.half_length,
                    half_width: a.half_width,
                    door_open: a.door_open,
                    traversable: a.traversable,
                })
                .collect(),
            lights: world
                .control
                .lights
                .iter()
                .map(|l| LightFrame {
                    id: l.id.clone(),
                    x: l.position.x,
                    y: l.position.y,
                    color: l.color_at(world.t()).as_str().to_string(),
                })
                .collect(),
            route: route_polyline(ep),
            route_replanned,
            status: ep.status(),
            analysis: ep.last_analysis(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEvent {
    pub plan_id: u64,
    pub tick: u64,
    pub plan: RecoveryPlan,
    /// Active route after the plan was applied.
    pub route: Vec<[f64; 2]>,
}

/// Everything a stream subscriber can receive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "data", rename_all = "snake_case")]
pub enum StreamEvent {
    Frame(Frame),
    Reasoning(TraceRecord),
    Plan(PlanEvent),
    Guidance(GuidanceMessage),
    MetricsFinal(RunMetrics),
}

impl StreamEvent {
    pub fn name(&self) -> &'static str {
        match self {
            StreamEvent::Frame(_) => "frame",
            StreamEvent::Reasoning(_) => "reasoning",
            StreamEvent::Plan(_) => "plan",
            StreamEvent::Guidance(_) => "guidance",
            StreamEvent::MetricsFinal(_) => "metrics_final",
        }
    }

    /// JSON payload of the event, without the tag.
    pub fn data(&self) -> serde_json::Value {
        match self {
            StreamEvent::Frame(f) => serde_json::to_value(f),
            StreamEvent::Reasoning(r) => serde_json::to_value(r),
            StreamEvent::Plan(p) => serde_json::to_value(p),
            StreamEvent::Guidance(g) => serde_json::to_value(g),
            StreamEvent::MetricsFinal(m) => serde_json::to_value(m),
        }
        .unwrap_or_default()
    }
}
