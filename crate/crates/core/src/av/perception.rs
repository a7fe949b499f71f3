//! Ground-truth perception adapter with range and field-of-view limits.

use std::collections::{BTreeMap, BTreeSet};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Obb, Vec2};
use crate::world::rng;
use crate::world::{work_zone_box, Actor, ActorKind, Corridor, LaneGraph, LaneId, LightColor, Pose, SignContent, WorldState};

use super::route::Route;
use super::{ARRIVAL_RADIUS, V_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub range: f64,
    /// Half-angle of the forward field of view (rad).
    pub fov: f64,
    /// Extra lateral clearance added to the ego half width when deciding
    /// whether something is in the ego's path.
    pub path_margin: f64,
    pub noise: bool,
    pub sigma_distance: f64,
    pub sigma_velocity: f64,
    /// Time a stop sign must be held at standstill before it counts as served.
    pub stop_sign_hold: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            range: 60.0,
            fov: std::f64::consts::FRAC_PI_2,
            path_margin: 0.2,
            noise: false,
            sigma_distance: 0.2,
            sigma_velocity: 0.1,
            stop_sign_hold: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneRelation {
    #[serde(rename = "ego")]
    EgoLane,
    LeftAdjacent,
    RightAdjacent,
    Opposite,
    Other,
}

impl LaneRelation {
    pub fn as_str(self) -> &'static str {
        match self {
            LaneRelation::EgoLane => "ego",
            LaneRelation::LeftAdjacent => "left_adjacent",
            LaneRelation::RightAdjacent => "right_adjacent",
            LaneRelation::Opposite => "opposite",
            LaneRelation::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ego" => LaneRelation::EgoLane,
            "left_adjacent" => LaneRelation::LeftAdjacent,
            "right_adjacent" => LaneRelation::RightAdjacent,
            "opposite" => LaneRelation::Opposite,
            "other" => LaneRelation::Other,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMeasurement {
    pub id: String,
    pub kind: ActorKind,
    /// Along-corridor distance from the ego center to the object center.
    pub distance: f64,
    /// Bumper-to-bumper clearance ahead of the ego.
    pub gap: f64,
    /// Along-corridor distance from the ego center to the far end of the footprint.
    pub far_distance: f64,
    pub relation: LaneRelation,
    pub lane_id: LaneId,
    /// Speed along the ego corridor.
    pub velocity: f64,
    /// Lateral speed toward the ego path (positive = approaching).
    pub lateral_velocity: f64,
    /// Lateral offset of the object center from the ego corridor centerline.
    pub lateral_offset: f64,
    /// Only reported for obstacles whose traversability is observable.
    pub traversable: Option<bool>,
    pub door_open: bool,
    /// Some part of the footprint (door included) intrudes into the ego path.
    pub blocks_ego_path: bool,
    /// The body itself intrudes into the ego path.
    pub occupies_ego_path: bool,
    pub position: Vec2,
}

impl ObjectMeasurement {
    pub fn is_stationary(&self) -> bool {
        self.velocity.abs() < 0.1 && self.lateral_velocity.abs() < 0.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkZoneMeasurement {
    pub id: String,
    pub lane_id: LaneId,
    pub relation: LaneRelation,
    pub distance: f64,
    pub gap: f64,
    pub far_distance: f64,
    pub blocks_ego_path: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StopKind {
    Light { color: LightColor },
    StopSign { served: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopLine {
    pub id: String,
    pub kind: StopKind,
    /// Along-corridor distance from the ego center to the line.
    pub distance: f64,
    /// Distance from the ego front bumper to the line (negative once past it).
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoStatus {
    pub tick: u64,
    pub speed: f64,
    pub pose: Pose,
    pub lane: LaneId,
    pub s: f64,
    pub d: f64,
    pub half_length: f64,
    pub half_width: f64,
    pub speed_limit: f64,
    /// Time spent continuously below the minimum speed.
    pub stationary_timer: f64,
    /// Time spent at exactly zero speed.
    pub stopped_time: f64,
    pub destination_flag: bool,
    /// Arc length covered along the active route.
    pub route_arc: f64,
    pub route_remaining: f64,
    /// Lane the route occupies just ahead of the ego.
    pub route_lane: LaneId,
    /// How far the route continues inside the ego's current lane corridor.
    pub route_ahead_in_lane: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborLane {
    pub lane: LaneId,
    /// Ego position projected onto the neighbor's centerline.
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perception {
    pub ego: EgoStatus,
    /// Sorted by distance, then id.
    pub objects: Vec<ObjectMeasurement>,
    pub work_zones: Vec<WorkZoneMeasurement>,
    pub stop_lines: Vec<StopLine>,
    pub left: Option<NeighborLane>,
    pub right: Option<NeighborLane>,
    pub corridor: Corridor,
}

impl Perception {
    pub fn object(&self, id: &str) -> Option<&ObjectMeasurement> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn neighbor(&self, left: bool) -> Option<&NeighborLane> {
        if left {
            self.left.as_ref()
        } else {
            self.right.as_ref()
        }
    }
}

/// Stateful perception front end: owns the timers that integrate over ticks.
#[derive(Debug, Clone, Default)]
pub struct Perceiver {
    pub config: PerceptionConfig,
    slow_ticks: u64,
    stopped_ticks: u64,
    sign_hold: BTreeMap<String, u64>,
    served: BTreeSet<String>,
    route_hint: usize,
}

/// Signed-distance interval of a footprint relative to a corridor: (s_min, s_max, d_min, d_max).
fn extent(corridor: &Corridor, graph: &LaneGraph, boxes: &[Obb]) -> Option<(f64, f64, f64, f64)> {
    let mut out: Option<(f64, f64, f64, f64)> = None;
    for b in boxes {
        for c in b.corners() {
            let (_, s, d) = corridor.project(graph, c)?;
            out = Some(match out {
                None => (s, s, d, d),
                Some((a, bb, cc, dd)) => (a.min(s), bb.max(s), cc.min(d), dd.max(d)),
            });
        }
    }
    out
}

impl Perceiver {
    pub fn new(config: PerceptionConfig) -> Self {
        Self { config, ..Default::default() }
    }

    /// Restarts route progress tracking after the route was swapped.
    pub fn reset_route(&mut self) {
        self.route_hint = 0;
    }

    pub fn perceive(&mut self, world: &WorldState, route: &Route) -> Perception {
        let cfg = self.config;
        let graph = world.graph.as_ref();
        let ego = world.ego().expect("world has an ego vehicle");
        let ego_pos = ego.pose.position();
        let dt = world.dt;

        if ego.speed.abs() < V_MIN {
            self.slow_ticks += 1;
        } else {
            self.slow_ticks = 0;
        }
        if ego.speed == 0.0 {
            self.stopped_ticks += 1;
        } else {
            self.stopped_ticks = 0;
        }

        let (idx, route_arc) = route.locate(ego_pos, self.route_hint);
        self.route_hint = idx;
        let route_lanes: BTreeSet<&LaneId> = route.lanes().collect();
        let horizon = cfg.range + 60.0;
        let corridor = graph.corridor(&ego.lane_id, horizon, |l| {
            l.successors.iter().find(|s| route_lanes.contains(s)).cloned()
        });
        let ego_chain_s = corridor.project(graph, ego_pos).map(|(_, s, _)| s).unwrap_or(ego.s);
        let route_ahead_in_lane = {
            let wps = &route.waypoints;
            let exit = (idx..wps.len()).find(|&i| !corridor.contains(&wps[i].lane));
            match exit {
                Some(i) => (route.arc_at(i) - route_arc).max(0.0),
                None => (route.length() - route_arc).max(0.0),
            }
        };
        let destination = *route.points().last().expect("route has points");
        let ego_lane = graph.get(&ego.lane_id);

        let neighbor = |left: bool| {
            graph.neighbor(&ego.lane_id, left).map(|l| NeighborLane {
                lane: l.id.clone(),
                s: l.centerline.project(ego_pos).s.clamp(0.0, l.length()),
            })
        };
        let left = neighbor(true);
        let right = neighbor(false);
        let side_corridor =
            |n: &Option<NeighborLane>| n.as_ref().map(|n| graph.corridor(&n.lane, horizon, |_| None));
        let left_corridor = side_corridor(&left);
        let right_corridor = side_corridor(&right);
        let relation = |lane: &str| {
            if corridor.contains(lane) {
                LaneRelation::EgoLane
            } else if left_corridor.as_ref().is_some_and(|c| c.contains(lane)) {
                LaneRelation::LeftAdjacent
            } else if right_corridor.as_ref().is_some_and(|c| c.contains(lane)) {
                LaneRelation::RightAdjacent
            } else if graph
                .get(lane)
                .zip(ego_lane)
                .is_some_and(|(l, e)| l.direction != e.direction)
            {
                LaneRelation::Opposite
            } else {
                LaneRelation::Other
            }
        };

        let band = ego.half_width + cfg.path_margin;
        let fwd = Vec2::from_heading(ego.pose.heading);
        let mut objects = Vec::new();
        for actor in world.actors.iter().filter(|a| a.kind != ActorKind::Ego) {
            let rel = actor.pose.position() - ego_pos;
            if rel.norm() > cfg.range {
                continue;
            }
            if rel.norm() > 1e-9 && rel.dot(fwd) < rel.norm() * cfg.fov.cos() - 1e-12 {
                continue;
            }
            objects.push(self.measure(world, actor, &corridor, ego, ego_chain_s, band, &relation));
        }
        if cfg.noise {
            for o in objects.iter_mut() {
                let mut r = rng::stream(world.seed, world.tick, rng::consumer_id(&format!("perception:{}", o.id)));
                let nd = Normal::new(0.0, cfg.sigma_distance).expect("valid sigma");
                let nv = Normal::new(0.0, cfg.sigma_velocity).expect("valid sigma");
                let e = nd.sample(&mut r);
                o.distance = (o.distance + e).max(0.0);
                o.gap = (o.gap + e).max(0.0);
                o.far_distance += e;
                o.velocity += nv.sample(&mut r);
            }
        }
        objects.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id)));

        let mut work_zones = Vec::new();
        for wz in &world.control.work_zones {
            let Some(zone) = work_zone_box(wz, graph) else { continue };
            let Some((smin, smax, dmin, dmax)) = extent(&corridor, graph, &[zone]) else { continue };
            if smax < ego_chain_s - ego.half_length || smin - ego_chain_s > cfg.range {
                continue;
            }
            work_zones.push(WorkZoneMeasurement {
                id: wz.id.clone(),
                lane_id: wz.lane.clone(),
                relation: relation(&wz.lane),
                distance: (smin - ego_chain_s).max(0.0),
                gap: (smin - ego_chain_s - ego.half_length).max(0.0),
                far_distance: smax - ego_chain_s,
                blocks_ego_path: dmax > -band && dmin < band,
            });
        }

        let mut stop_lines = Vec::new();
        let on_corridor = |p: Vec2| corridor.project(graph, p).map(|(_, s, _)| s - ego_chain_s);
        for light in &world.control.lights {
            if !light.lanes.iter().any(|l| corridor.contains(l)) {
                continue;
            }
            let Some(distance) = on_corridor(light.position) else { continue };
            let gap = distance - ego.half_length;
            if gap < -0.5 || distance > cfg.range {
                continue;
            }
            stop_lines.push(StopLine {
                id: light.id.clone(),
                kind: StopKind::Light { color: light.color_at(world.t()) },
                distance,
                gap,
            });
        }
        for sign in world.control.signs.iter().filter(|s| s.content == SignContent::Stop) {
            let applies = if sign.lanes.is_empty() {
                corridor.project(graph, sign.position).is_some_and(|(l, _, d)| d.abs() <= l.width * 1.5)
            } else {
                sign.lanes.iter().any(|l| corridor.contains(l))
            };
            if !applies {
                continue;
            }
            let Some(distance) = on_corridor(sign.position) else { continue };
            let gap = distance - ego.half_length;
            if gap < -0.5 || distance > cfg.range {
                continue;
            }
            if !self.served.contains(&sign.id) {
                if gap <= 3.0 && ego.speed.abs() < 0.05 {
                    let hold = self.sign_hold.entry(sign.id.clone()).or_default();
                    *hold += 1;
                    if *hold as f64 * dt >= cfg.stop_sign_hold - 1e-9 {
                        self.served.insert(sign.id.clone());
                    }
                } else {
                    self.sign_hold.remove(&sign.id);
                }
            }
            stop_lines.push(StopLine {
                id: sign.id.clone(),
                kind: StopKind::StopSign { served: self.served.contains(&sign.id) },
                distance,
                gap,
            });
        }
        stop_lines.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id)));

        let status = EgoStatus {
            tick: world.tick,
            speed: ego.speed,
            pose: ego.pose,
            lane: ego.lane_id.clone(),
            s: ego.s,
            d: ego.d,
            half_length: ego.half_length,
            half_width: ego.half_width,
            speed_limit: ego_lane.map_or(crate::world::lane::DEFAULT_SPEED_LIMIT, |l| l.speed_limit),
            stationary_timer: self.slow_ticks as f64 * dt,
            stopped_time: self.stopped_ticks as f64 * dt,
            destination_flag: (ego_pos - destination).norm() <= ARRIVAL_RADIUS,
            route_arc,
            route_remaining: (route.length() - route_arc).max(0.0),
            route_lane: route.lane_at(route_arc, 1.0).clone(),
            route_ahead_in_lane,
        };
        Perception { ego: status, objects, work_zones, stop_lines, left, right, corridor }
    }

    #[allow(clippy::too_many_arguments)]
    fn measure(
        &self,
        world: &WorldState,
        actor: &Actor,
        corridor: &Corridor,
        ego: &Actor,
        ego_chain_s: f64,
        band: f64,
        relation: &dyn Fn(&str) -> LaneRelation,
    ) -> ObjectMeasurement {
        let graph = world.graph.as_ref();
        let pos = actor.pose.position();
        let lane_heading = graph
            .get(&actor.lane_id)
            .map_or(actor.pose.heading, |l| l.centerline.heading_at(actor.s));
        let v_world = Vec2::from_heading(lane_heading) * actor.speed
            + Vec2::from_heading(lane_heading).left_normal() * actor.lateral_speed;
        let (obj_s, obj_d, heading) = match corridor.project(graph, pos) {
            Some((lane, s, d)) => {
                let local = s - corridor.offset_of(&lane.id).unwrap_or(0.0);
                (s, d, lane.centerline.heading_at(local))
            }
            None => (ego_chain_s + (pos - ego.pose.position()).norm(), 0.0, ego.pose.heading),
        };
        let body = extent(corridor, graph, &[actor.body()]);
        let full = extent(corridor, graph, &actor.footprint());
        let intrudes = |e: Option<(f64, f64, f64, f64)>| e.is_some_and(|(_, _, dmin, dmax)| dmax > -band && dmin < band);
        let (smin, smax) = full.map_or((obj_s, obj_s), |(a, b, _, _)| (a, b));
        let lat = v_world.dot(Vec2::from_heading(heading).left_normal());
        let lateral_velocity = if obj_d > band {
            -lat
        } else if obj_d < -band {
            lat
        } else {
            lat.abs()
        };
        ObjectMeasurement {
            id: actor.id.clone(),
            kind: actor.kind,
            distance: (obj_s - ego_chain_s).max(0.0),
            gap: (smin - ego_chain_s - ego.half_length).max(0.0),
            far_distance: smax - ego_chain_s,
            relation: relation(&actor.lane_id),
            lane_id: actor.lane_id.clone(),
            velocity: v_world.dot(Vec2::from_heading(heading)),
            lateral_velocity,
            lateral_offset: obj_d,
            traversable: (actor.kind == ActorKind::StaticObstacle && actor.traversable_observable)
                .then_some(actor.traversable),
            door_open: actor.door_open,
            blocks_ego_path: intrudes(full),
            occupies_ego_path: intrudes(body),
            position: pos,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::av::route::plan_route;
    use crate::world::load_scenario;

    fn scenario(actors: &str) -> crate::world::Scenario {
        let doc = format!(
            r#"{{
            "meta": {{"name": "t", "category": "free_flow"}},
            "map": {{"lanes": [
                {{"id": "L", "centerline": [[0,3.5],[300,3.5]], "right": "R"}},
                {{"id": "R", "centerline": [[0,0],[300,0]], "left": "L"}}
            ]}},
            "actors": [{{"id": "ego", "kind": "ego", "lane": "R", "s": 10.0}} {actors}],
            "route": {{"start": {{"lane": "R", "s": 10.0}}, "destination": {{"lane": "R", "s": 250.0}}}}
        }}"#
        );
        load_scenario(&doc).unwrap()
    }

    fn perceive_once(sc: &crate::world::Scenario) -> Perception {
        let route = plan_route(&sc.world.graph, &sc.route.start, &sc.route.destination, &Default::default()).unwrap();
        Perceiver::new(PerceptionConfig::default()).perceive(&sc.world, &route)
    }

    #[test]
    fn lead_vehicle_ground_truth() {
        let sc = scenario(r#", {"id": "lead", "kind": "vehicle", "lane": "R", "s": 28.0}"#);
        let p = perceive_once(&sc);
        assert_eq!(p.objects.len(), 1);
        let o = &p.objects[0];
        assert_eq!(o.kind, ActorKind::Vehicle);
        assert_eq!(o.relation, LaneRelation::EgoLane);
        assert!((o.distance - 18.0).abs() < 1e-9);
        assert!(o.velocity.abs() < 1e-12);
        assert!(o.blocks_ego_path && o.occupies_ego_path);
        assert!((o.gap - (18.0 - 4.6)).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_and_behind_are_omitted() {
        let sc = scenario(
            r#", {"id": "far", "kind": "vehicle", "lane": "R", "s": 110.0},
                {"id": "side", "kind": "vehicle", "lane": "L", "s": 20.0}"#,
        );
        let p = perceive_once(&sc);
        assert_eq!(p.objects.len(), 1);
        assert_eq!(p.objects[0].id, "side");
        assert_eq!(p.objects[0].relation, LaneRelation::LeftAdjacent);
        assert!(!p.objects[0].blocks_ego_path);
    }

    #[test]
    fn stationary_timer_counts_ticks() {
        let sc = scenario("");
        let route = plan_route(&sc.world.graph, &sc.route.start, &sc.route.destination, &Default::default()).unwrap();
        let mut perceiver = Perceiver::new(PerceptionConfig::default());
        let mut world = sc.world.clone();
        let mut last = None;
        for _ in 0..25 {
            last = Some(perceiver.perceive(&world, &route));
            world = world.step(&crate::world::ControlCommand { brake: 1.0, ..Default::default() });
        }
        let status = last.unwrap().ego;
        // independent oracle: 25 samples at dt each
        let expected: f64 = std::iter::repeat_n(0.05, 25).sum();
        assert!((status.stationary_timer - expected).abs() < 1e-12);
        assert!((status.stationary_timer - 1.25).abs() < 1e-9);
        assert!(!status.destination_flag);
    }
}
