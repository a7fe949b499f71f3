//! Baseline automated-driving stack: perception adapter, route planner,
//! rule-based decision module and the low-level controllers.

pub mod control;
pub mod decision;
pub mod idm;
pub mod perception;
pub mod pid;
pub mod route;
pub mod stack;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use control::{ControlConfig, ControlError, Controller};
pub use decision::{DecisionConfig, DecisionModule, DecisionOutput, DecisionSource, InfeasibleBehavior, PlanProgress};
pub use idm::IdmParams;
pub use perception::{EgoStatus, LaneRelation, ObjectMeasurement, Perception, PerceptionConfig, Perceiver, StopLine};
pub use pid::{Pid, PidGains};
pub use route::{plan_route, Route, RouteError};
pub use stack::{AvConfig, AvStack, StackOutput};

/// Speed below which the ego counts as not making progress (4.5 km/h).
pub const V_MIN: f64 = 1.25;
/// Radius around the destination waypoint that counts as arrival.
pub const ARRIVAL_RADIUS: f64 = 2.0;
pub const MAX_REVERSE_DISTANCE: f64 = 10.0;

/// High-level driving behavior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case")]
pub enum Behavior {
    LaneKeep,
    LaneChangeLeft,
    LaneChangeRight,
    ProceedThrough,
    Stop,
    Wait { duration: f64 },
    Reverse { distance: f64 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BehaviorError {
    #[error("wait duration must be positive, got {0}")]
    WaitDuration(f64),
    #[error("reverse distance must be in (0, 10] m, got {0}")]
    ReverseDistance(f64),
    #[error("unknown behavior token {0:?}")]
    UnknownToken(String),
}

impl Behavior {
    pub fn validate(&self) -> Result<(), BehaviorError> {
        match *self {
            Behavior::Wait { duration } if !(duration > 0.0 && duration.is_finite()) => {
                Err(BehaviorError::WaitDuration(duration))
            }
            Behavior::Reverse { distance } if !(distance > 0.0 && distance <= MAX_REVERSE_DISTANCE) => {
                Err(BehaviorError::ReverseDistance(distance))
            }
            _ => Ok(()),
        }
    }

    /// Compact token such as `LaneChangeLeft` or `Wait(5.0)`.
    pub fn token(&self) -> String {
        match self {
            Behavior::LaneKeep => "LaneKeep".into(),
            Behavior::LaneChangeLeft => "LaneChangeLeft".into(),
            Behavior::LaneChangeRight => "LaneChangeRight".into(),
            Behavior::ProceedThrough => "ProceedThrough".into(),
            Behavior::Stop => "Stop".into(),
            Behavior::Wait { duration } => format!("Wait({duration:.1})"),
            Behavior::Reverse { distance } => format!("Reverse({distance:.1})"),
        }
    }

    pub fn parse_token(s: &str) -> Result<Behavior, BehaviorError> {
        let s = s.trim();
        let arg = |prefix: &str| -> Option<f64> {
            s.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?.trim().parse().ok()
        };
        let b = match s {
            "LaneKeep" => Behavior::LaneKeep,
            "LaneChangeLeft" => Behavior::LaneChangeLeft,
            "LaneChangeRight" => Behavior::LaneChangeRight,
            "ProceedThrough" => Behavior::ProceedThrough,
            "Stop" => Behavior::Stop,
            _ => {
                if let Some(duration) = arg("Wait") {
                    Behavior::Wait { duration }
                } else if let Some(distance) = arg("Reverse") {
                    Behavior::Reverse { distance }
                } else {
                    return Err(BehaviorError::UnknownToken(s.to_string()));
                }
            }
        };
        b.validate()?;
        Ok(b)
    }

    pub fn is_lane_change(&self) -> bool {
        matches!(self, Behavior::LaneChangeLeft | Behavior::LaneChangeRight)
    }

    /// Every behavior kind, with representative arguments.
    pub fn catalog() -> [Behavior; 7] {
        [
            Behavior::LaneKeep,
            Behavior::LaneChangeLeft,
            Behavior::LaneChangeRight,
            Behavior::ProceedThrough,
            Behavior::Stop,
            Behavior::Wait { duration: 5.0 },
            Behavior::Reverse { distance: 3.0 },
        ]
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token())
    }
}
