//! Recovery layer that sits beside the baseline stack: detects when the ego
//! is immobilized, reasons about the scene and injects a behavior plan or a
//! replanned route.

pub mod apply;
pub mod coordinator;
pub mod detector;
pub mod observation;
pub mod pipeline;

use serde::{Deserialize, Serialize};

use crate::av::{Behavior, BehaviorError};
use crate::world::scenario::Waypoint;
use crate::world::LaneGraph;

pub use apply::{apply_recovery, check_stale, map_digest, ApplyError};
pub use coordinator::{RecoveryConfig, RecoveryCoordinator, Responder, SolverStatus, TickReport};
pub use detector::{is_immobilized, DetectorConfig};
pub use observation::{build_observation, parse_observation, serialize_observation, Intent, SceneObservation, TpType};
pub use pipeline::{run_pipeline, Branch, PipelineContext, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    None,
    TrafficControl,
    Yielding,
    BlockedEgoLane,
    BlockedAllLanes,
    Unknown,
}

impl Cause {
    pub fn as_str(self) -> &'static str {
        match self {
            Cause::None => "none",
            Cause::TrafficControl => "traffic_control",
            Cause::Yielding => "yielding",
            Cause::BlockedEgoLane => "blocked_ego_lane",
            Cause::BlockedAllLanes => "blocked_all_lanes",
            Cause::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisResult {
    /// 0 or 1.
    pub immobilized: u8,
    pub cause: Cause,
}

impl AnalysisResult {
    pub fn not_stuck(cause: Cause) -> Self {
        Self { immobilized: 0, cause }
    }

    pub fn stuck(cause: Cause) -> Self {
        Self { immobilized: 1, cause }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        match (self.immobilized, self.cause) {
            (0, Cause::None | Cause::TrafficControl | Cause::Yielding) | (1, _) => Ok(()),
            (0, c) => Err(PlanError::Analysis(format!("immobilized=0 with cause {}", c.as_str()))),
            (n, _) => Err(PlanError::Analysis(format!("immobilized must be 0 or 1, got {n}"))),
        }
    }
}

/// Behavior plan plus optional route replanning request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryPlan {
    #[serde(with = "behavior_tokens")]
    pub behavior_plan: Vec<Behavior>,
    pub reason: String,
    pub route_replanning: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route_start_point: Option<Waypoint>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("behavior plan is empty")]
    EmptyPlan,
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error("route_replanning is set but route_start_point is missing")]
    MissingStartPoint,
    #[error("route_start_point given without route_replanning")]
    UnexpectedStartPoint,
    #[error("route_start_point lane {0} does not exist")]
    UnknownStartLane(String),
    #[error("route_start_point s={s} is outside lane {lane}")]
    StartOffLane { lane: String, s: f64 },
    #[error("output present but analysis says not immobilized")]
    OutputWithoutImmobilization,
    #[error("invalid analysis: {0}")]
    Analysis(String),
}

impl RecoveryPlan {
    /// Checks the plan invariants; `graph` enables the start-point lane check.
    pub fn validate(&self, graph: Option<&LaneGraph>) -> Result<(), PlanError> {
        if self.behavior_plan.is_empty() {
            return Err(PlanError::EmptyPlan);
        }
        for b in &self.behavior_plan {
            b.validate()?;
        }
        match (&self.route_start_point, self.route_replanning) {
            (None, true) => return Err(PlanError::MissingStartPoint),
            (Some(_), false) => return Err(PlanError::UnexpectedStartPoint),
            _ => {}
        }
        if let (Some(wp), Some(graph)) = (&self.route_start_point, graph) {
            let lane = graph.get(&wp.lane).ok_or_else(|| PlanError::UnknownStartLane(wp.lane.clone()))?;
            if !(0.0..=lane.length()).contains(&wp.s) {
                return Err(PlanError::StartOffLane { lane: wp.lane.clone(), s: wp.s });
            }
        }
        Ok(())
    }

    pub fn tokens(&self) -> Vec<String> {
        self.behavior_plan.iter().map(Behavior::token).collect()
    }
}

/// `None` means the recovery layer does not intervene.
pub type SolverOutput = Option<RecoveryPlan>;

mod behavior_tokens {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::av::Behavior;

    pub fn serialize<S: Serializer>(plan: &[Behavior], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(plan.iter().map(Behavior::token))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Behavior>, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        tokens.iter().map(|t| Behavior::parse_token(t).map_err(serde::de::Error::custom)).collect()
    }
}
