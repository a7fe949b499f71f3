//! Injecting a plan into the stack, and the checks run at delivery time.

use std::collections::BTreeSet;

use crate::av::decision::lane_clear;
use crate::av::{AvStack, Behavior, Perception, RouteError, V_MIN};
use crate::reasoning::MapDigest;
use crate::world::{ActorKind, LaneId, WorldState};

use super::RecoveryPlan;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ApplyError {
    #[error("replanning failed: {0}")]
    NoRoute(#[from] RouteError),
    #[error("route_replanning set without a start point")]
    MissingStartPoint,
}

/// Lanes and start points near the ego for the reasoning request.
pub fn map_digest(p: &Perception) -> String {
    MapDigest {
        ego_lane: p.ego.lane.clone(),
        ego_s: p.ego.s,
        left: p.left.as_ref().map(|n| (n.lane.clone(), n.s)),
        right: p.right.as_ref().map(|n| (n.lane.clone(), n.s)),
        route_lane: p.ego.route_lane.clone(),
        route_ahead_in_lane: p.ego.route_ahead_in_lane,
    }
    .to_string()
}

fn path_blockers(p: &Perception, horizon: f64) -> impl Iterator<Item = (&String, &LaneId)> {
    let objects = p
        .objects
        .iter()
        .filter(move |o| o.blocks_ego_path && o.is_stationary() && o.traversable != Some(true) && o.gap <= horizon)
        .map(|o| (&o.id, &o.lane_id));
    let zones = p.work_zones.iter().filter(move |w| w.blocks_ego_path && w.gap <= horizon).map(|w| (&w.id, &w.lane_id));
    objects.chain(zones)
}

/// Re-checks a delivered plan against the current scene. Returns the reason
/// it no longer applies, if any.
pub fn check_stale(plan: &RecoveryPlan, p: &Perception, stack: &AvStack) -> Option<String> {
    let cfg = &stack.config.decision;
    if p.ego.destination_flag {
        return Some("ego already at destination".into());
    }
    if p.ego.speed.abs() >= V_MIN {
        return Some(format!("ego is moving again at {:.2} m/s", p.ego.speed));
    }
    let first = plan.behavior_plan.first()?;
    if matches!(first, Behavior::ProceedThrough) || first.is_lane_change() || plan.route_replanning {
        let h = cfg.latch_horizon;
        let any_blocker = p.objects.iter().any(|o| o.blocks_ego_path && o.is_stationary() && o.gap <= h)
            || p.work_zones.iter().any(|w| w.blocks_ego_path && w.gap <= h);
        if !any_blocker {
            return Some("blocker is gone".into());
        }
    }
    if first.is_lane_change() {
        let left = *first == Behavior::LaneChangeLeft;
        // Debris the plan will drive over does not count against the target lane.
        let ignore: BTreeSet<String> = if plan.behavior_plan.contains(&Behavior::ProceedThrough) {
            p.objects.iter().filter(|o| o.kind == ActorKind::StaticObstacle).map(|o| o.id.clone()).collect()
        } else {
            BTreeSet::new()
        };
        if !lane_clear(p, left, cfg, &ignore) {
            return Some(format!("{} lane is no longer clear", if left { "left" } else { "right" }));
        }
    }
    None
}

/// Replans the route if requested, then installs the behavior plan as the
/// decision override. Returns the plan id. On error nothing changes.
pub fn apply_recovery(
    plan: &RecoveryPlan,
    stack: &mut AvStack,
    world: &WorldState,
    p: &Perception,
) -> Result<u64, ApplyError> {
    if plan.route_replanning {
        let start = plan.route_start_point.as_ref().ok_or(ApplyError::MissingStartPoint)?;
        let dest_lane = stack.destination().lane.clone();
        let avoid: BTreeSet<LaneId> = path_blockers(p, f64::INFINITY)
            .map(|(_, lane)| lane.clone())
            .filter(|l| *l != start.lane && *l != dest_lane)
            .collect();
        let route = stack.replan(world, start, &avoid)?;
        log::info!("replanned from {}@{:.1} avoiding {:?}: cost {:.1}", start.lane, start.s, avoid, route.cost);
        stack.replace_route(route);
    }
    Ok(stack.install_plan(plan.behavior_plan.clone(), p))
}
