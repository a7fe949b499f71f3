//! Scenario documents: JSON description of map, actors, traffic control,
//! route and scripted triggers.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::actor::{Actor, ActorKind, Pose, Side};
use super::lane::{LaneGraph, LaneGraphError, LaneId, LaneSpec};
use super::traffic::TrafficControlState;
use super::{Trigger, VehicleParams, WorldState, DT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Construction,
    ParkedObstacle,
    OpenDoor,
    TraversableDebris,
    PedestrianCrossing,
    RedLight,
    StopSign,
    LeadVehicle,
    FreeFlow,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Construction => "construction",
            Category::ParkedObstacle => "parked_obstacle",
            Category::OpenDoor => "open_door",
            Category::TraversableDebris => "traversable_debris",
            Category::PedestrianCrossing => "pedestrian_crossing",
            Category::RedLight => "red_light",
            Category::StopSign => "stop_sign",
            Category::LeadVehicle => "lead_vehicle",
            Category::FreeFlow => "free_flow",
        }
    }

    /// Scenarios in these categories immobilize a vehicle that never replans.
    pub fn is_blockage(self) -> bool {
        matches!(
            self,
            Category::Construction | Category::ParkedObstacle | Category::OpenDoor | Category::TraversableDebris
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub name: String,
    pub category: Category,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDoc {
    pub lanes: Vec<LaneSpec>,
}

/// A point on the lane graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub lane: LaneId,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub start: Waypoint,
    pub destination: Waypoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorDoc {
    pub id: String,
    pub kind: ActorKind,
    pub lane: LaneId,
    pub s: f64,
    #[serde(default)]
    pub d: f64,
    #[serde(default)]
    pub speed: f64,
    #[serde(default)]
    pub half_length: Option<f64>,
    #[serde(default)]
    pub half_width: Option<f64>,
    #[serde(default)]
    pub traversable: bool,
    #[serde(default = "yes")]
    pub traversable_observable: bool,
    #[serde(default)]
    pub door_open: bool,
    #[serde(default)]
    pub door_side: Side,
}

fn yes() -> bool {
    true
}

/// Outcome a scenario is designed to produce; used by tests.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedOutcome {
    /// The baseline stack ends up permanently stopped.
    #[serde(default)]
    pub baseline_stuck: bool,
    /// First behavior of the recovery plan, as a behavior token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_behavior: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route_replanning: Option<bool>,
    /// Whether the recovery layer is expected to intervene at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention: Option<bool>,
    /// Recovery needs passenger guidance to succeed.
    #[serde(default)]
    pub needs_guidance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    #[serde(default = "default_wheelbase")]
    pub wheelbase: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self { wheelbase: default_wheelbase(), seed: 0 }
    }
}

fn default_wheelbase() -> f64 {
    2.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub meta: Meta,
    pub map: MapDoc,
    #[serde(default)]
    pub actors: Vec<ActorDoc>,
    #[serde(default)]
    pub traffic_control: TrafficControlState,
    pub route: RouteSpec,
    #[serde(default)]
    pub triggers: Vec<Trigger>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<ExpectedOutcome>,
    #[serde(default)]
    pub params: ScenarioParams,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Map(#[from] LaneGraphError),
    #[error("{what} references unknown lane {lane}")]
    DanglingLane { what: String, lane: LaneId },
    #[error("actors {0} and {1} overlap at spawn")]
    OverlappingSpawn(String, String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn schema(path: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub doc: ScenarioDoc,
    pub world: WorldState,
    pub route: RouteSpec,
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.doc.meta.name
    }

    pub fn category(&self) -> Category {
        self.doc.meta.category
    }
}

fn default_extent(kind: ActorKind) -> (f64, f64) {
    match kind {
        ActorKind::Ego | ActorKind::Vehicle => (2.3, 0.9),
        ActorKind::Pedestrian => (0.3, 0.3),
        ActorKind::StaticObstacle => (0.5, 0.5),
    }
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Parses and fully resolves a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ScenarioDoc = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    build(doc)
}

pub fn build(doc: ScenarioDoc) -> Result<Scenario, ScenarioError> {
    let graph = Arc::new(LaneGraph::from_specs(&doc.map.lanes)?);
    for (i, lane) in doc.map.lanes.iter().enumerate() {
        if !is_token(&lane.id) {
            return Err(schema(&format!("map.lanes[{i}].id"), "lane id must be a token"));
        }
    }

    let lane_ok = |what: String, lane: &str| -> Result<&super::lane::Lane, ScenarioError> {
        graph
            .get(lane)
            .ok_or_else(|| ScenarioError::DanglingLane { what, lane: lane.to_string() })
    };

    for (name, wp) in [("route.start", &doc.route.start), ("route.destination", &doc.route.destination)] {
        let lane = lane_ok(name.into(), &wp.lane)?;
        if !(0.0..=lane.length()).contains(&wp.s) {
            return Err(schema(name, format!("s={} outside lane {} of length {:.1}", wp.s, wp.lane, lane.length())));
        }
    }

    let mut actors = Vec::with_capacity(doc.actors.len() + 1);
    let mut ids = BTreeSet::new();
    for (i, a) in doc.actors.iter().enumerate() {
        let path = format!("actors[{i}]");
        if !is_token(&a.id) {
            return Err(schema(&format!("{path}.id"), "actor id must be a token"));
        }
        if !ids.insert(a.id.clone()) {
            return Err(schema(&format!("{path}.id"), format!("duplicate actor id {}", a.id)));
        }
        if a.traversable && a.kind != ActorKind::StaticObstacle {
            return Err(schema(&format!("{path}.traversable"), "only static obstacles can be traversable"));
        }
        if a.speed < 0.0 {
            return Err(schema(&format!("{path}.speed"), "speed must be non-negative"));
        }
        let lane = lane_ok(path.clone(), &a.lane)?;
        let (hl, hw) = default_extent(a.kind);
        let (p, h) = lane.centerline.pose_at(a.s);
        let pos = p + crate::geometry::Vec2::from_heading(h).left_normal() * a.d;
        actors.push(Actor {
            id: a.id.clone(),
            kind: a.kind,
            pose: Pose { x: pos.x, y: pos.y, heading: h },
            speed: a.speed,
            lane_id: a.lane.clone(),
            s: a.s,
            d: a.d,
            lateral_speed: 0.0,
            half_length: a.half_length.unwrap_or(hl),
            half_width: a.half_width.unwrap_or(hw),
            traversable: a.traversable,
            traversable_observable: a.traversable_observable,
            door_open: a.door_open,
            door_side: a.door_side,
        });
    }

    match actors.iter().filter(|a| a.kind == ActorKind::Ego).count() {
        0 => {
            let start = &doc.route.start;
            let lane = graph.get(&start.lane).unwrap();
            let (p, h) = lane.centerline.pose_at(start.s);
            if ids.contains("ego") {
                return Err(schema("actors", "id 'ego' is reserved for the implicit ego vehicle"));
            }
            let (hl, hw) = default_extent(ActorKind::Ego);
            actors.insert(
                0,
                Actor {
                    id: "ego".into(),
                    kind: ActorKind::Ego,
                    pose: Pose { x: p.x, y: p.y, heading: h },
                    speed: 0.0,
                    lane_id: start.lane.clone(),
                    s: start.s,
                    d: 0.0,
                    lateral_speed: 0.0,
                    half_length: hl,
                    half_width: hw,
                    traversable: false,
                    traversable_observable: true,
                    door_open: false,
                    door_side: Side::Left,
                },
            );
        }
        1 => {}
        _ => return Err(schema("actors", "at most one ego actor")),
    }

    for i in 0..actors.len() {
        for j in (i + 1)..actors.len() {
            let overlap = actors[i]
                .footprint()
                .iter()
                .any(|a| actors[j].footprint().iter().any(|b| a.overlaps(b)));
            if overlap {
                return Err(ScenarioError::OverlappingSpawn(actors[i].id.clone(), actors[j].id.clone()));
            }
        }
    }

    for (i, t) in doc.triggers.iter().enumerate() {
        if !ids.contains(&t.actor) {
            return Err(schema(&format!("triggers[{i}].actor"), format!("unknown actor {}", t.actor)));
        }
        if !(t.time >= 0.0) {
            return Err(schema(&format!("triggers[{i}].time"), "time must be >= 0"));
        }
    }

    let tc = &doc.traffic_control;
    for (i, l) in tc.lights.iter().enumerate() {
        if l.phases.is_empty() || l.phases.iter().any(|(_, d)| !(*d > 0.0)) {
            return Err(schema(&format!("traffic_control.lights[{i}].phases"), "phase durations must be > 0"));
        }
        for lane in &l.lanes {
            lane_ok(format!("traffic_control.lights[{i}]"), lane)?;
        }
    }
    for (i, s) in tc.signs.iter().enumerate() {
        for lane in &s.lanes {
            lane_ok(format!("traffic_control.signs[{i}]"), lane)?;
        }
    }
    for (i, wz) in tc.work_zones.iter().enumerate() {
        lane_ok(format!("traffic_control.work_zones[{i}]"), &wz.lane)?;
        if !(wz.s[1] > wz.s[0]) {
            return Err(schema(&format!("traffic_control.work_zones[{i}].s"), "interval must be increasing"));
        }
    }

    let mut triggers = doc.triggers.clone();
    triggers.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut world = WorldState {
        tick: 0,
        dt: DT,
        seed: doc.params.seed,
        actors,
        control: Arc::new(doc.traffic_control.clone()),
        graph,
        vehicle: VehicleParams { wheelbase: doc.params.wheelbase, ..VehicleParams::default() },
        pending_triggers: triggers,
        contacts: BTreeSet::new(),
        events: Vec::new(),
    };
    world.fire_due_triggers();
    world.contacts = world.collisions().into_iter().map(|c| c.other).collect();
    let route = doc.route.clone();
    Ok(Scenario { doc, world, route })
}
