//! Deterministic fixed-timestep 2D lane-graph world.

pub mod actor;
pub mod lane;
pub mod rng;
pub mod scenario;
pub mod traffic;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{wrap_angle, Obb, Vec2};

pub use actor::{Actor, ActorId, ActorKind, Pose, Side};
pub use lane::{Corridor, Lane, LaneDirection, LaneGraph, LaneId, LaneSpec};
pub use scenario::{load_scenario, Scenario, ScenarioError};
pub use traffic::{LightColor, SignContent, TrafficControlState, TrafficLight, TrafficSign, WorkZone};

/// Simulation tick length in seconds (20 Hz).
pub const DT: f64 = 0.05;

/// Low-level actuator command for the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlCommand {
    /// Normalized steering in `[-1, 1]`, positive to the left.
    pub steer: f64,
    pub throttle: f64,
    pub brake: f64,
    /// Reverse gear; throttle then accelerates backwards.
    #[serde(default)]
    pub reverse: bool,
}

impl ControlCommand {
    pub const IDLE: ControlCommand = ControlCommand { steer: 0.0, throttle: 0.0, brake: 0.0, reverse: false };

    /// Clamps every field into its actuator range and releases the throttle
    /// whenever the brake is engaged.
    pub fn saturated(self) -> Self {
        let clean = |v: f64, lo: f64, hi: f64| if v.is_nan() { 0.0 } else { v.clamp(lo, hi) };
        let steer = clean(self.steer, -1.0, 1.0);
        let mut throttle = clean(self.throttle, 0.0, 1.0);
        let brake = clean(self.brake, 0.0, 1.0);
        if brake > 0.0 {
            throttle = 0.0;
        }
        ControlCommand { steer, throttle, brake, reverse: self.reverse }
    }

    /// Command whose resulting acceleration is `accel` (m/s^2) given actuator limits.
    pub fn from_accel(accel: f64, steer: f64, vehicle: &VehicleParams) -> Self {
        let (throttle, brake) = if accel >= 0.0 {
            ((accel / vehicle.max_accel).min(1.0), 0.0)
        } else {
            (0.0, (-accel / vehicle.max_brake).min(1.0))
        };
        ControlCommand { steer, throttle, brake, reverse: false }.saturated()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase: f64,
    /// Road-wheel angle at full steering input (rad).
    pub max_steer: f64,
    /// Acceleration at full throttle (m/s^2).
    pub max_accel: f64,
    /// Deceleration at full brake (m/s^2).
    pub max_brake: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self { wheelbase: 2.8, max_steer: 0.6, max_accel: 3.0, max_brake: 8.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TriggerAction {
    SetSpeed { speed: f64 },
    /// Breakdown: speed drops to zero and stays there.
    Stop,
    OpenDoor,
    CloseDoor,
    /// Pedestrian starts walking across the road (left positive).
    Cross { lateral_speed: f64 },
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub actor: ActorId,
    pub time: f64,
    pub action: TriggerAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionKind {
    Pedestrian,
    Vehicle,
    Static,
    /// Drove over a traversable obstacle; not an infraction.
    Traversal,
}

/// Ego overlapping another object at the current tick.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Contact {
    pub other: String,
    pub kind: CollisionKind,
}

/// First tick of a contiguous contact interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub tick: u64,
    pub other: String,
    pub kind: CollisionKind,
}

/// Full simulation state at one tick. Cheap to clone: the map and traffic
/// control layout are shared.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub tick: u64,
    pub dt: f64,
    pub seed: u64,
    pub actors: Vec<Actor>,
    pub control: Arc<TrafficControlState>,
    pub graph: Arc<LaneGraph>,
    pub vehicle: VehicleParams,
    /// Not yet fired, ordered by time.
    pub pending_triggers: Vec<Trigger>,
    /// Ids currently in contact with the ego.
    pub contacts: BTreeSet<String>,
    /// Collision events that started on this tick.
    pub events: Vec<CollisionEvent>,
}

impl WorldState {
    pub fn t(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn ego(&self) -> Option<&Actor> {
        self.actors.iter().find(|a| a.kind == ActorKind::Ego)
    }

    #[cfg(test)]
    fn ego_mut(&mut self) -> Option<&mut Actor> {
        self.actors.iter_mut().find(|a| a.kind == ActorKind::Ego)
    }

    #[cfg(test)]
    pub(crate) fn set_ego_speed(&mut self, v: f64) {
        if let Some(e) = self.ego_mut() {
            e.speed = v;
        }
    }

    pub fn actor(&self, id: &str) -> Option<&Actor> {
        self.actors.iter().find(|a| a.id == id)
    }

    pub fn light_color(&self, id: &str) -> Option<LightColor> {
        self.control.lights.iter().find(|l| l.id == id).map(|l| l.color_at(self.t()))
    }

    /// Fires every pending trigger whose time is at or before the current time.
    pub(crate) fn fire_due_triggers(&mut self) {
        let now = self.t();
        let (due, rest): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.pending_triggers).into_iter().partition(|t| t.time <= now + 1e-9);
        self.pending_triggers = rest;
        for trig in due {
            if let TriggerAction::Remove = trig.action {
                self.actors.retain(|a| a.id != trig.actor);
                continue;
            }
            let Some(actor) = self.actors.iter_mut().find(|a| a.id == trig.actor) else {
                continue;
            };
            match trig.action {
                TriggerAction::SetSpeed { speed } => actor.speed = speed,
                TriggerAction::Stop => {
                    actor.speed = 0.0;
                    actor.lateral_speed = 0.0;
                }
                TriggerAction::OpenDoor => actor.door_open = true,
                TriggerAction::CloseDoor => actor.door_open = false,
                TriggerAction::Cross { lateral_speed } => actor.lateral_speed = lateral_speed,
                TriggerAction::Remove => unreachable!(),
            }
        }
    }

    /// Advances one tick. Pure: the same state and command always produce a
    /// bit-identical successor.
    pub fn step(&self, cmd: &ControlCommand) -> WorldState {
        let mut next = self.clone();
        let cmd = cmd.saturated();
        let graph = self.graph.clone();
        for actor in next.actors.iter_mut() {
            match actor.kind {
                ActorKind::Vehicle | ActorKind::Pedestrian => advance_scripted(actor, &graph, self.dt),
                ActorKind::Ego => advance_ego(actor, &cmd, &self.vehicle, &graph, self.dt),
                ActorKind::StaticObstacle => {}
            }
        }
        next.tick += 1;
        next.fire_due_triggers();

        let contacts = next.collisions();
        let current: BTreeSet<String> = contacts.iter().map(|c| c.other.clone()).collect();
        next.events = contacts
            .into_iter()
            .filter(|c| !self.contacts.contains(&c.other))
            .map(|c| CollisionEvent { tick: next.tick, other: c.other, kind: c.kind })
            .collect();
        next.contacts = current;
        next
    }

    /// Oriented-rectangle overlap between the ego and every other object,
    /// including work zones.
    pub fn collisions(&self) -> Vec<Contact> {
        let Some(ego) = self.ego() else { return Vec::new() };
        let body = ego.body();
        let mut out = Vec::new();
        for other in self.actors.iter().filter(|a| a.kind != ActorKind::Ego) {
            if !other.footprint().iter().any(|f| body.overlaps(f)) {
                continue;
            }
            let kind = match other.kind {
                ActorKind::Pedestrian => CollisionKind::Pedestrian,
                ActorKind::Vehicle => CollisionKind::Vehicle,
                ActorKind::StaticObstacle if other.traversable => CollisionKind::Traversal,
                _ => CollisionKind::Static,
            };
            out.push(Contact { other: other.id.clone(), kind });
        }
        for wz in &self.control.work_zones {
            if let Some(zone) = work_zone_box(wz, &self.graph) {
                if body.overlaps(&zone) {
                    out.push(Contact { other: format!("work_zone:{}", wz.id), kind: CollisionKind::Static });
                }
            }
        }
        out.sort();
        out
    }

    /// Hex digest over every field that evolves during a run.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.tick.to_le_bytes());
        h.update(self.seed.to_le_bytes());
        for a in &self.actors {
            h.update(a.id.as_bytes());
            h.update([a.kind as u8, a.door_open as u8]);
            for v in [a.pose.x, a.pose.y, a.pose.heading, a.speed, a.s, a.d, a.lateral_speed] {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update(a.lane_id.as_bytes());
        }
        for c in &self.contacts {
            h.update(c.as_bytes());
        }
        h.update((self.pending_triggers.len() as u64).to_le_bytes());
        let out = h.finalize();
        out[..16].iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub(crate) fn work_zone_box(wz: &WorkZone, graph: &LaneGraph) -> Option<Obb> {
    let lane = graph.get(&wz.lane)?;
    let mid = 0.5 * (wz.s[0] + wz.s[1]);
    let (p, h) = lane.centerline.pose_at(mid);
    Some(Obb {
        center: p,
        heading: h,
        half_length: 0.5 * (wz.s[1] - wz.s[0]).abs(),
        half_width: (lane.width / 2.0 - 0.3).max(0.2),
    })
}

fn advance_scripted(actor: &mut Actor, graph: &LaneGraph, dt: f64) {
    let Some(mut lane) = graph.get(&actor.lane_id) else { return };
    if actor.speed != 0.0 {
        actor.s += actor.speed * dt;
        while actor.s > lane.length() {
            match lane.successors.iter().min().and_then(|id| graph.get(id)) {
                Some(next) => {
                    actor.s -= lane.length();
                    lane = next;
                    actor.lane_id = lane.id.clone();
                }
                None => {
                    actor.s = lane.length();
                    actor.speed = 0.0;
                }
            }
        }
    }
    if actor.lateral_speed != 0.0 {
        actor.d += actor.lateral_speed * dt;
        let p = lane.centerline.point_at(actor.s, actor.d);
        match graph.locate(p, Some(&lane.id)) {
            Some((found, pr)) if pr.d.abs() <= found.width / 2.0 + 1e-9 => {
                if found.id != lane.id {
                    actor.lane_id = found.id.clone();
                    actor.s = pr.s;
                    actor.d = pr.d;
                    lane = found;
                }
            }
            _ => {
                // Reached the road edge: stay on the curb side of the lane.
                actor.d = actor.d.signum() * lane.width / 2.0;
                actor.lateral_speed = 0.0;
            }
        }
    }
    let (p, h) = lane.centerline.pose_at(actor.s);
    let pos = p + Vec2::from_heading(h).left_normal() * actor.d;
    let heading = if actor.kind == ActorKind::Pedestrian && (actor.lateral_speed != 0.0 || actor.speed != 0.0) {
        let v = Vec2::from_heading(h) * actor.speed + Vec2::from_heading(h).left_normal() * actor.lateral_speed;
        v.y.atan2(v.x)
    } else {
        h
    };
    actor.pose = Pose { x: pos.x, y: pos.y, heading };
}

/// Kinematic bicycle update with the command held constant over the tick.
/// The pose advances along a constant-curvature arc whose length is the
/// distance covered under constant acceleration, which is exact for the
/// continuous model with a piecewise-constant input.
pub fn bicycle_update(pose: Pose, speed: f64, cmd: &ControlCommand, vehicle: &VehicleParams, dt: f64) -> (Pose, f64) {
    let cmd = cmd.saturated();
    let gear = if cmd.reverse { -1.0 } else { 1.0 };
    let drive = cmd.throttle * vehicle.max_accel * gear;
    let brake = cmd.brake * vehicle.max_brake;
    let accel = if speed > 0.0 {
        drive - brake
    } else if speed < 0.0 {
        drive + brake
    } else if brake >= drive.abs() {
        0.0
    } else {
        drive - drive.signum() * brake
    };

    let mut new_speed = speed + accel * dt;
    let ds = if brake > 0.0 && speed != 0.0 && new_speed.signum() != speed.signum() {
        // Brakes bring the vehicle to rest inside this tick.
        new_speed = 0.0;
        let t_stop = speed.abs() / accel.abs();
        0.5 * speed * t_stop
    } else {
        speed * dt + 0.5 * accel * dt * dt
    };
    if !cmd.reverse && new_speed < 0.0 && speed >= 0.0 {
        new_speed = 0.0;
    }

    let curvature = (cmd.steer * vehicle.max_steer).tan() / vehicle.wheelbase;
    let dtheta = curvature * ds;
    let (x, y, heading) = if dtheta.abs() < 1e-12 {
        (pose.x + ds * pose.heading.cos(), pose.y + ds * pose.heading.sin(), pose.heading + dtheta)
    } else {
        let h1 = pose.heading + dtheta;
        (
            pose.x + (h1.sin() - pose.heading.sin()) / curvature,
            pose.y - (h1.cos() - pose.heading.cos()) / curvature,
            h1,
        )
    };
    (Pose { x, y, heading: wrap_angle(heading) }, new_speed)
}

fn advance_ego(ego: &mut Actor, cmd: &ControlCommand, vehicle: &VehicleParams, graph: &LaneGraph, dt: f64) {
    let (pose, speed) = bicycle_update(ego.pose, ego.speed, cmd, vehicle, dt);
    ego.pose = pose;
    ego.speed = speed;
    if let Some((lane, pr)) = graph.locate(pose.position(), Some(&ego.lane_id)) {
        ego.lane_id = lane.id.clone();
        ego.s = pr.s;
        ego.d = pr.d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_world() -> WorldState {
        let doc = r#"{
            "meta": {"name": "t", "category": "free_flow"},
            "map": {"lanes": [{"id": "A", "centerline": [[0,0],[500,0]]}]},
            "actors": [
                {"id": "ego", "kind": "ego", "lane": "A", "s": 10.0, "speed": 10.0},
                {"id": "ped", "kind": "pedestrian", "lane": "A", "s": 60.0, "d": 1.0}
            ],
            "route": {"start": {"lane": "A", "s": 10.0}, "destination": {"lane": "A", "s": 400.0}}
        }"#;
        load_scenario(doc).unwrap().world
    }

    #[test]
    fn idle_world_only_advances_time() {
        let mut w = straight_world();
        for a in w.actors.iter_mut() {
            a.speed = 0.0;
        }
        let n = w.step(&ControlCommand::IDLE);
        assert_eq!(n.tick, w.tick + 1);
        assert_eq!(n.actors, w.actors);
        assert!((n.t() - w.t() - DT).abs() < 1e-12);
    }

    #[test]
    fn step_is_deterministic() {
        let w = straight_world();
        let cmd = ControlCommand { steer: 0.2, throttle: 0.5, brake: 0.0, reverse: false };
        let a = w.step(&cmd).step(&cmd);
        let b = w.step(&cmd).step(&cmd);
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a, b);
    }

    #[test]
    fn brake_stops_at_zero() {
        let v = VehicleParams::default();
        let cmd = ControlCommand { brake: 1.0, ..ControlCommand::IDLE };
        let (pose, speed) = bicycle_update(Pose::default(), 0.2, &cmd, &v, DT);
        assert_eq!(speed, 0.0);
        assert!((pose.x - 0.2 * 0.2 / (2.0 * 8.0)).abs() < 1e-12);
    }

    #[test]
    fn reverse_goes_backwards() {
        let v = VehicleParams::default();
        let cmd = ControlCommand { throttle: 0.5, reverse: true, ..ControlCommand::IDLE };
        let (pose, speed) = bicycle_update(Pose::default(), 0.0, &cmd, &v, DT);
        assert!(speed < 0.0 && pose.x < 0.0);
    }

    #[test]
    fn collisions_far_apart_and_overlap() {
        let mut w = straight_world();
        assert!(w.collisions().is_empty());
        let ped = w.actors.iter().find(|a| a.id == "ped").unwrap().pose;
        let ego = w.ego_mut().unwrap();
        ego.pose.x = ped.x - 1.0;
        ego.pose.y = ped.y;
        assert_eq!(
            w.collisions(),
            vec![Contact { other: "ped".into(), kind: CollisionKind::Pedestrian }]
        );
    }
}
