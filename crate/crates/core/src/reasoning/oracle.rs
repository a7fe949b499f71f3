//! Deterministic rule-based reasoner. Works from the request text alone.

use crate::av::{Behavior, LaneRelation, MAX_REVERSE_DISTANCE, V_MIN};
use crate::guidance::{interpret_keywords, Confidence, Verb};
use crate::recovery::observation::{parse_observation, ParticipantObs, SceneObservation};
use crate::recovery::{AnalysisResult, Cause, Intent, RecoveryPlan, TpType};
use crate::world::scenario::Waypoint;
use crate::world::LightColor;

use super::{BackendError, MapDigest, ReasoningBackend, ReasoningRequest, ReasoningResponse, WireAnswer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Longitudinal window that must be free for a lane change (m).
    pub clearance: f64,
    /// Stop signs closer than this hold the ego (m).
    pub stop_sign_range: f64,
    /// Crossing pedestrians closer than this hold the ego (m).
    pub yield_range: f64,
    pub wait: f64,
    pub reverse: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { clearance: 15.0, stop_sign_range: 15.0, yield_range: 15.0, wait: 5.0, reverse: 3.0 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RuleOracle {
    pub config: OracleConfig,
}

enum Blocker<'a> {
    Participant(&'a ParticipantObs),
    WorkZone { distance: f64 },
}

impl Blocker<'_> {
    fn distance(&self) -> f64 {
        match self {
            Blocker::Participant(t) => t.distance,
            Blocker::WorkZone { distance } => *distance,
        }
    }

    /// Sits in the ego lane itself rather than intruding from the side.
    fn in_ego_lane(&self) -> bool {
        match self {
            Blocker::Participant(t) => t.lane == LaneRelation::EgoLane && t.intent != Intent::DoorOpen,
            Blocker::WorkZone { .. } => true,
        }
    }

    fn traversable(&self) -> bool {
        matches!(self, Blocker::Participant(t) if t.traversable == Some(true))
    }
}

impl RuleOracle {
    pub fn new(config: OracleConfig) -> Self {
        Self { config }
    }

    fn side_clear(&self, obs: &SceneObservation, digest: &MapDigest, left: bool, ignore_debris: bool) -> bool {
        let (relation, exists) = if left {
            (LaneRelation::LeftAdjacent, digest.left.is_some())
        } else {
            (LaneRelation::RightAdjacent, digest.right.is_some())
        };
        let w = self.config.clearance;
        exists
            && !obs.tp.iter().any(|t| {
                t.lane == relation
                    && t.distance.abs() <= w
                    && t.traversable != Some(true)
                    && !(ignore_debris && t.kind == TpType::Obstacle)
            })
            && !obs.tc.wz.iter().any(|z| z.lane == relation && z.distance <= w && z.distance + z.length >= -w)
    }

    fn side_has_debris(obs: &SceneObservation, left: bool) -> bool {
        let relation = if left { LaneRelation::LeftAdjacent } else { LaneRelation::RightAdjacent };
        obs.tp.iter().any(|t| t.lane == relation && t.kind == TpType::Obstacle)
    }

    /// The decision table. Returns analysis, plan and notes.
    pub fn decide(&self, req: &ReasoningRequest) -> (AnalysisResult, Option<RecoveryPlan>, Vec<String>) {
        let mut notes = Vec::new();
        let obs = match parse_observation(&req.observation_text) {
            Ok(p) => p.obs,
            Err(e) => {
                notes.push(format!("unreadable observation: {e}"));
                return (AnalysisResult::stuck(Cause::Unknown), None, notes);
            }
        };
        let digest = MapDigest::parse(&req.map_digest);
        let cfg = &self.config;

        if obs.ego.destination_flag || obs.ego.speed.abs() >= V_MIN {
            return (AnalysisResult::not_stuck(Cause::None), None, notes);
        }
        let light_holds = matches!(&obs.tc.tl, Some(l) if l.color != LightColor::Green);
        let sign_holds = obs.tc.ts.iter().any(|s| !s.served && s.distance <= cfg.stop_sign_range);
        if light_holds || sign_holds {
            return (AnalysisResult::not_stuck(Cause::TrafficControl), None, notes);
        }
        let yielding = obs.tp.iter().any(|t| {
            (t.intent == Intent::Crossing && t.distance <= cfg.yield_range)
                || (t.lane == LaneRelation::EgoLane
                    && t.kind == TpType::Vehicle
                    && t.intent == Intent::Proceeding)
        });
        if yielding {
            return (AnalysisResult::not_stuck(Cause::Yielding), None, notes);
        }

        let mut blockers: Vec<Blocker> = obs
            .tp
            .iter()
            .filter(|t| {
                t.blocking
                    && t.kind != TpType::Pedestrian
                    && matches!(t.intent, Intent::Stationary | Intent::DoorOpen)
            })
            .map(Blocker::Participant)
            .collect();
        blockers.extend(
            obs.tc.wz.iter().filter(|z| z.lane == LaneRelation::EgoLane).map(|z| Blocker::WorkZone { distance: z.distance }),
        );
        blockers.sort_by(|a, b| a.distance().total_cmp(&b.distance()));
        let blocker = blockers.first();

        let interpretation = req.guidance_text.as_deref().map(interpret_keywords);
        let guided = matches!(&interpretation, Some(i) if i.confidence == Confidence::Matched);
        if req.guidance_text.is_some() && !guided {
            notes.push("guidance_unmatched".into());
        }
        if blocker.is_none() && !guided {
            return (AnalysisResult::stuck(Cause::Unknown), None, notes);
        }

        let mut cause = Cause::BlockedEgoLane;
        let mut plan: Vec<Behavior> = Vec::new();
        let mut reason;
        let ignore_debris = guided
            && interpretation.as_ref().is_some_and(|i| i.has(Verb::IgnoreObstacle) || i.has(Verb::ProceedOver));

        if let (true, Some(interp)) = (guided, &interpretation) {
            reason = format!("following passenger guidance {:?}", req.guidance_text.as_deref().unwrap_or_default());
            for d in &interp.directives {
                match d.verb {
                    Verb::ChangeLaneLeft | Verb::ChangeLaneRight => {
                        let left = d.verb == Verb::ChangeLaneLeft;
                        if self.side_clear(&obs, &digest, left, ignore_debris) {
                            plan.push(if left { Behavior::LaneChangeLeft } else { Behavior::LaneChangeRight });
                        } else {
                            notes.push(format!(
                                "guidance_rejected: {} lane is not clear",
                                if left { "left" } else { "right" }
                            ));
                            plan.push(Behavior::Wait { duration: cfg.wait });
                        }
                    }
                    Verb::ProceedOver => plan.push(Behavior::ProceedThrough),
                    Verb::IgnoreObstacle => {}
                    Verb::Wait => plan.push(Behavior::Wait { duration: d.amount.filter(|a| *a > 0.0).unwrap_or(cfg.wait) }),
                    Verb::Reverse => plan.push(Behavior::Reverse {
                        distance: d.amount.filter(|a| *a > 0.0).unwrap_or(cfg.reverse).min(MAX_REVERSE_DISTANCE),
                    }),
                }
            }
            // Driving over debris in a neighbouring lane needs the lane change first.
            let blocker_is_debris = blocker.is_some_and(|b| b.traversable() || matches!(b, Blocker::Participant(t) if t.kind == TpType::Obstacle));
            if ignore_debris && !blocker_is_debris && !plan.iter().any(Behavior::is_lane_change) {
                let side = [true, false]
                    .into_iter()
                    .find(|&left| Self::side_has_debris(&obs, left) && self.side_clear(&obs, &digest, left, true));
                if let Some(left) = side {
                    plan.insert(0, if left { Behavior::LaneChangeLeft } else { Behavior::LaneChangeRight });
                }
            }
            if ignore_debris && !plan.contains(&Behavior::ProceedThrough) {
                plan.push(Behavior::ProceedThrough);
            }
        } else {
            let b = blocker.expect("checked above");
            if b.traversable() {
                plan.push(Behavior::ProceedThrough);
                reason = "the blocking object is traversable".into();
            } else if self.side_clear(&obs, &digest, true, false) {
                plan.push(Behavior::LaneChangeLeft);
                reason = "ego lane blocked, left lane clear".into();
            } else if self.side_clear(&obs, &digest, false, false) {
                plan.push(Behavior::LaneChangeRight);
                reason = "ego lane blocked, right lane clear".into();
            } else {
                plan.push(Behavior::Wait { duration: cfg.wait });
                cause = Cause::BlockedAllLanes;
                reason = "ego lane blocked and no adjacent lane is clear".into();
            }
        }
        if blocker.is_none() {
            cause = Cause::Unknown;
        }
        if let Some(last) = plan.last().copied().filter(Behavior::is_lane_change) {
            // Known-traversable debris in the target lane is driven over rather than stopped for.
            let left = last == Behavior::LaneChangeLeft;
            let relation = if left { LaneRelation::LeftAdjacent } else { LaneRelation::RightAdjacent };
            let debris = obs.tp.iter().any(|t| {
                t.lane == relation
                    && t.kind == TpType::Obstacle
                    && (t.traversable == Some(true) || ignore_debris)
            });
            plan.push(if debris { Behavior::ProceedThrough } else { Behavior::LaneKeep });
        }
        if plan.is_empty() {
            plan.push(Behavior::Wait { duration: cfg.wait });
        }

        let mut start = None;
        if let (Some(b), Some(first)) = (blocker, plan.first()) {
            let target = match first {
                Behavior::LaneChangeLeft => digest.left.clone(),
                Behavior::LaneChangeRight => digest.right.clone(),
                _ => None,
            };
            if let Some((lane, s)) = target {
                if b.in_ego_lane() && digest.route_ahead_in_lane > b.distance() {
                    start = Some(Waypoint { lane, s });
                    reason.push_str("; route continues past the blocker, replanning");
                }
            }
        }
        let plan = RecoveryPlan { behavior_plan: plan, reason, route_replanning: start.is_some(), route_start_point: start };
        (AnalysisResult::stuck(cause), Some(plan), notes)
    }
}

impl ReasoningBackend for RuleOracle {
    fn name(&self) -> &str {
        "rule_oracle"
    }

    fn reason(&self, req: &ReasoningRequest) -> Result<ReasoningResponse, BackendError> {
        let (analysis, output, notes) = self.decide(req);
        let raw = serde_json::to_string(&WireAnswer { analysis, output: output.clone() })
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(ReasoningResponse { analysis, output, raw, notes })
    }
}
