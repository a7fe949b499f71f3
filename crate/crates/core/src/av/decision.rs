//! Rule-based behavior selection and override-plan bookkeeping.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::world::{ActorKind, Corridor, LaneGraph, LaneId, LightColor};

use super::idm::IdmParams;
use super::perception::{LaneRelation, Perception, StopKind};
use super::Behavior;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionConfig {
    /// Clearance kept to stationary vehicles, obstacles and work zones (m).
    pub blocker_standoff: f64,
    /// Clearance kept to pedestrians in or entering the path (m).
    pub pedestrian_standoff: f64,
    /// Slack added to the IDM desired gap when deciding to stop (m).
    pub envelope_margin: f64,
    /// Longitudinal window that must be free for a lane change (m).
    pub lane_change_clearance: f64,
    /// Lateral offset to the target centerline that completes a lane change (m).
    pub lane_change_tolerance: f64,
    /// Pedestrians reaching the path within this time count as in it (s).
    pub crossing_horizon: f64,
    /// Distance a plan's LaneKeep runs when no blocker was latched (m).
    pub lane_keep_distance: f64,
    /// Distance past the latched blocker before a plan's LaneKeep completes (m).
    pub clear_margin: f64,
    /// Look-ahead used to latch blockers when a plan is installed (m).
    pub latch_horizon: f64,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            blocker_standoff: 10.0,
            pedestrian_standoff: 5.0,
            envelope_margin: 5.0,
            lane_change_clearance: 15.0,
            lane_change_tolerance: 0.2,
            crossing_horizon: 3.0,
            lane_keep_distance: 15.0,
            clear_margin: 2.0,
            latch_horizon: 40.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Lead,
    Blocker,
    StopLine,
    Destination,
}

/// Longitudinal constraint expressed as an IDM leader.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub id: String,
    pub kind: ConstraintKind,
    /// Gap handed to the IDM; stand-offs are already folded in.
    pub gap: f64,
    pub lead_speed: f64,
}

impl Constraint {
    pub fn is_stationary(&self) -> bool {
        self.kind != ConstraintKind::Lead
    }
}

/// Which objects count as being on the path.
#[derive(Debug, Clone, Copy)]
pub enum PathFilter<'a> {
    /// Objects whose footprint intrudes into the ego lane band.
    EgoPath,
    /// Objects located on any lane of the given corridor.
    Lanes(&'a Corridor),
}

pub fn constraints(
    p: &Perception,
    cfg: &DecisionConfig,
    idm: &IdmParams,
    ignore: &BTreeSet<String>,
    filter: PathFilter<'_>,
) -> Vec<Constraint> {
    let ego = &p.ego;
    let v = ego.speed.max(0.0);
    let band = ego.half_width + 0.2;
    let mut out = Vec::new();
    for o in &p.objects {
        if ignore.contains(&o.id) || o.far_distance <= ego.half_length {
            continue;
        }
        let on_path = match filter {
            PathFilter::EgoPath => o.blocks_ego_path,
            PathFilter::Lanes(c) => c.contains(&o.lane_id),
        };
        if o.kind == ActorKind::Pedestrian {
            let entering = o.lateral_velocity > 0.1
                && (o.lateral_offset.abs() - band - 0.3).max(0.0) / o.lateral_velocity <= cfg.crossing_horizon;
            if on_path || (entering && matches!(filter, PathFilter::EgoPath)) {
                out.push(Constraint {
                    id: o.id.clone(),
                    kind: ConstraintKind::Blocker,
                    gap: o.gap - cfg.pedestrian_standoff + idm.min_gap,
                    lead_speed: 0.0,
                });
            }
            continue;
        }
        if !on_path {
            continue;
        }
        if o.is_stationary() {
            out.push(Constraint {
                id: o.id.clone(),
                kind: ConstraintKind::Blocker,
                gap: o.gap - cfg.blocker_standoff + idm.min_gap,
                lead_speed: 0.0,
            });
        } else {
            out.push(Constraint { id: o.id.clone(), kind: ConstraintKind::Lead, gap: o.gap, lead_speed: o.velocity });
        }
    }
    for wz in &p.work_zones {
        let on_path = match filter {
            PathFilter::EgoPath => wz.blocks_ego_path,
            PathFilter::Lanes(c) => c.contains(&wz.lane_id),
        };
        if on_path && !ignore.contains(&wz.id) && wz.far_distance > ego.half_length {
            out.push(Constraint {
                id: format!("work_zone:{}", wz.id),
                kind: ConstraintKind::Blocker,
                gap: wz.gap - cfg.blocker_standoff + idm.min_gap,
                lead_speed: 0.0,
            });
        }
    }
    for line in &p.stop_lines {
        let stop = match line.kind {
            StopKind::Light { color: LightColor::Red } => line.gap > 0.5 || v < 0.5,
            StopKind::Light { color: LightColor::Yellow } => {
                line.gap - 1.0 >= v * v / (2.0 * idm.comfort_decel)
            }
            StopKind::Light { color: LightColor::Green } => false,
            StopKind::StopSign { served } => !served,
        };
        if stop {
            let before = if matches!(line.kind, StopKind::StopSign { .. }) { 0.5 } else { 1.0 };
            out.push(Constraint {
                id: line.id.clone(),
                kind: ConstraintKind::StopLine,
                gap: line.gap - before + idm.min_gap,
                lead_speed: 0.0,
            });
        }
    }
    out.push(Constraint {
        id: "destination".into(),
        kind: ConstraintKind::Destination,
        gap: ego.route_remaining + idm.min_gap,
        lead_speed: 0.0,
    });
    out
}

/// Most restrictive IDM acceleration over a constraint set.
pub fn idm_accel(cons: &[Constraint], v: f64, v0: f64, idm: &IdmParams) -> f64 {
    let v = v.max(0.0);
    let free = idm.accel(v, v0, None, 0.0);
    cons.iter().map(|c| idm.accel(v, v0, Some(c.gap), v - c.lead_speed)).fold(free, f64::min)
}

/// Lateral offset of `p` from the centerline corridor that starts at `lane`.
pub fn offset_to_lane(graph: &LaneGraph, lane: &str, p: Vec2) -> Option<f64> {
    let corridor = graph.corridor(lane, 500.0, |_| None);
    corridor.project(graph, p).map(|(_, _, d)| d)
}

/// True when no object in the neighbor lane sits within the clearance window.
pub fn lane_clear(p: &Perception, left: bool, cfg: &DecisionConfig, ignore: &BTreeSet<String>) -> bool {
    let relation = if left { LaneRelation::LeftAdjacent } else { LaneRelation::RightAdjacent };
    p.neighbor(left).is_some()
        && !p.objects.iter().any(|o| {
            o.relation == relation
                && !ignore.contains(&o.id)
                && o.traversable != Some(true)
                && o.distance <= cfg.lane_change_clearance
        })
        && !p.work_zones.iter().any(|w| w.relation == relation && w.distance <= cfg.lane_change_clearance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    Baseline,
    Override,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionOutput {
    pub behavior: Behavior,
    pub source: DecisionSource,
    pub lane_change_target: Option<LaneId>,
    /// Objects excluded from the longitudinal constraint set.
    pub ignore: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("behavior {behavior} is infeasible: {reason}")]
pub struct InfeasibleBehavior {
    pub behavior: Behavior,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
enum ItemState {
    Fresh,
    LaneChange { target: LaneId },
    LaneKeep { traveled: f64 },
    Proceed,
    Stop,
    Wait { ticks: u64 },
    Reverse { start: Vec2 },
}

/// Progress through an installed behavior plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanProgress {
    pub id: u64,
    pub plan: Vec<Behavior>,
    pub index: usize,
    item: ItemState,
    /// Point the ego must pass (with direction) before a plan LaneKeep completes.
    clear_point: Option<(Vec2, Vec2)>,
    /// Obstacles the plan drives over.
    proceed: BTreeSet<String>,
}

impl PlanProgress {
    pub fn new(id: u64, plan: Vec<Behavior>, p: &Perception, cfg: &DecisionConfig) -> Self {
        let fwd = Vec2::from_heading(p.ego.pose.heading);
        let ego_pos = p.ego.pose.position();
        let object_far = p
            .objects
            .iter()
            .filter(|o| o.blocks_ego_path && o.is_stationary() && o.distance <= cfg.latch_horizon)
            .map(|o| o.far_distance);
        let zone_far = p
            .work_zones
            .iter()
            .filter(|w| w.blocks_ego_path && w.distance <= cfg.latch_horizon)
            .map(|w| w.far_distance);
        let clear_point = object_far
            .chain(zone_far)
            .filter(|f| *f > 0.0)
            .reduce(f64::min)
            .map(|far| (ego_pos + fwd * far, fwd));
        let proceed = if plan.contains(&Behavior::ProceedThrough) {
            p.objects
                .iter()
                .filter(|o| {
                    o.kind == ActorKind::StaticObstacle
                        && o.distance <= cfg.latch_horizon
                        && matches!(
                            o.relation,
                            LaneRelation::EgoLane | LaneRelation::LeftAdjacent | LaneRelation::RightAdjacent
                        )
                })
                .map(|o| o.id.clone())
                .collect()
        } else {
            BTreeSet::new()
        };
        Self { id, plan, index: 0, item: ItemState::Fresh, clear_point, proceed }
    }

    pub fn current(&self) -> Option<Behavior> {
        self.plan.get(self.index).copied()
    }

    /// Advances completed items and returns the behavior to execute, or
    /// `None` once the whole plan has completed.
    fn step(
        &mut self,
        p: &Perception,
        graph: &LaneGraph,
        cfg: &DecisionConfig,
        dt: f64,
    ) -> Result<Option<DecisionOutput>, InfeasibleBehavior> {
        let ego_pos = p.ego.pose.position();
        loop {
            let Some(behavior) = self.current() else { return Ok(None) };
            if self.item == ItemState::Fresh {
                self.item = match behavior {
                    Behavior::LaneChangeLeft | Behavior::LaneChangeRight => {
                        let left = behavior == Behavior::LaneChangeLeft;
                        let target = p.neighbor(left).map(|n| n.lane.clone()).ok_or_else(|| InfeasibleBehavior {
                            behavior,
                            reason: format!("lane {} has no {} neighbor", p.ego.lane, if left { "left" } else { "right" }),
                        })?;
                        ItemState::LaneChange { target }
                    }
                    Behavior::LaneKeep => ItemState::LaneKeep { traveled: 0.0 },
                    Behavior::ProceedThrough => ItemState::Proceed,
                    Behavior::Stop => ItemState::Stop,
                    Behavior::Wait { .. } => ItemState::Wait { ticks: 0 },
                    Behavior::Reverse { .. } => ItemState::Reverse { start: ego_pos },
                };
            }
            let done = match (&mut self.item, behavior) {
                (ItemState::LaneChange { target }, _) => {
                    offset_to_lane(graph, target, ego_pos).is_some_and(|d| d.abs() < cfg.lane_change_tolerance)
                }
                (ItemState::LaneKeep { traveled }, _) => {
                    let done = match self.clear_point {
                        Some((cp, dir)) => (ego_pos - cp).dot(dir) > p.ego.half_length + cfg.clear_margin,
                        None => *traveled >= cfg.lane_keep_distance,
                    };
                    *traveled += p.ego.speed.abs() * dt;
                    done
                }
                (ItemState::Proceed, _) => !p.objects.iter().any(|o| {
                    self.proceed.contains(&o.id) && o.blocks_ego_path && o.far_distance > -p.ego.half_length
                }),
                (ItemState::Stop, _) => p.ego.speed.abs() < 0.05,
                (ItemState::Wait { ticks }, Behavior::Wait { duration }) => {
                    let done = *ticks as f64 * dt >= duration - 1e-9;
                    *ticks += 1;
                    done
                }
                (ItemState::Reverse { start }, Behavior::Reverse { distance }) => {
                    (ego_pos - *start).norm() >= distance
                }
                _ => unreachable!("item state matches behavior"),
            };
            if done {
                self.index += 1;
                self.item = ItemState::Fresh;
                continue;
            }
            let lane_change_target = match &self.item {
                ItemState::LaneChange { target } => Some(target.clone()),
                _ => None,
            };
            let proceeding = self.plan[self.index..].contains(&Behavior::ProceedThrough);
            return Ok(Some(DecisionOutput {
                behavior,
                source: DecisionSource::Override,
                lane_change_target,
                ignore: if proceeding { self.proceed.clone() } else { BTreeSet::new() },
            }));
        }
    }
}

/// Baseline behavior selection plus override-plan precedence.
#[derive(Debug, Clone)]
pub struct DecisionModule {
    pub config: DecisionConfig,
    pub idm: IdmParams,
    plan: Option<PlanProgress>,
    baseline_change: Option<(Behavior, LaneId)>,
    next_plan_id: u64,
}

impl DecisionModule {
    pub fn new(config: DecisionConfig, idm: IdmParams) -> Self {
        Self { config, idm, plan: None, baseline_change: None, next_plan_id: 1 }
    }

    /// Installs a behavior plan that replaces the baseline decision until it completes.
    pub fn install(&mut self, plan: Vec<Behavior>, p: &Perception) -> u64 {
        let id = self.next_plan_id;
        self.next_plan_id += 1;
        self.plan = Some(PlanProgress::new(id, plan, p, &self.config));
        self.baseline_change = None;
        id
    }

    pub fn active_plan(&self) -> Option<&PlanProgress> {
        self.plan.as_ref()
    }

    pub fn clear_override(&mut self) {
        self.plan = None;
    }

    pub fn decide(&mut self, p: &Perception, graph: &LaneGraph, dt: f64) -> Result<DecisionOutput, InfeasibleBehavior> {
        if let Some(plan) = self.plan.as_mut() {
            match plan.step(p, graph, &self.config, dt) {
                Ok(Some(out)) => return Ok(out),
                Ok(None) => self.plan = None,
                Err(e) => {
                    self.plan = None;
                    return Err(e);
                }
            }
        }
        Ok(self.baseline(p, graph))
    }

    /// Rule-based decision without any override.
    pub fn baseline(&mut self, p: &Perception, graph: &LaneGraph) -> DecisionOutput {
        let out = |behavior, target: Option<LaneId>| DecisionOutput {
            behavior,
            source: DecisionSource::Baseline,
            lane_change_target: target,
            ignore: BTreeSet::new(),
        };
        if p.ego.destination_flag {
            return out(Behavior::Stop, None);
        }
        let v = p.ego.speed.max(0.0);
        let envelope = self.idm.desired_gap(v, v) + self.config.envelope_margin;
        let cons = constraints(p, &self.config, &self.idm, &BTreeSet::new(), PathFilter::EgoPath);
        let must_stop = cons
            .iter()
            .any(|c| matches!(c.kind, ConstraintKind::Blocker | ConstraintKind::StopLine) && c.gap <= envelope);
        if must_stop {
            return out(Behavior::Stop, None);
        }

        let ego_pos = p.ego.pose.position();
        if let Some((behavior, target)) = self.baseline_change.clone() {
            let done = offset_to_lane(graph, &target, ego_pos)
                .is_none_or(|d| d.abs() < self.config.lane_change_tolerance);
            if !done {
                return out(behavior, Some(target));
            }
            self.baseline_change = None;
        }
        let route_lane = &p.ego.route_lane;
        if !p.corridor.contains(route_lane) {
            for left in [true, false] {
                let is_target = p.neighbor(left).is_some_and(|n| &n.lane == route_lane);
                if is_target && lane_clear(p, left, &self.config, &BTreeSet::new()) {
                    let behavior = if left { Behavior::LaneChangeLeft } else { Behavior::LaneChangeRight };
                    self.baseline_change = Some((behavior, route_lane.clone()));
                    return out(behavior, Some(route_lane.clone()));
                }
            }
        }
        out(Behavior::LaneKeep, None)
    }
}
