//! Lane-graph route planning and route progress tracking.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use crate::geometry::Vec2;
use crate::world::scenario::Waypoint;
use crate::world::{Lane, LaneGraph, LaneId};

/// Cost added for each lateral lane transition (m).
pub const LANE_CHANGE_PENALTY: f64 = 5.0;
/// Waypoint spacing along a lane (m).
pub const WAYPOINT_SPACING: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RouteError {
    #[error("no route from {from} to {to}")]
    NoRoute { from: String, to: String },
    #[error("waypoint on unknown lane {0}")]
    UnknownLane(LaneId),
}

/// One lane of a planned path, traversed from `entry` to `exit` arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneLeg {
    pub lane: LaneId,
    pub entry: f64,
    pub exit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub waypoints: Vec<Waypoint>,
    pub legs: Vec<LaneLeg>,
    points: Vec<Vec2>,
    /// Longitudinal arc length at each waypoint; lateral transitions add nothing.
    cumulative: Vec<f64>,
    /// Planner cost (arc length plus lane-change penalties).
    pub cost: f64,
}

fn micros(x: f64) -> i64 {
    (x * 1e6).round() as i64
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Label {
    cost: i64,
    lanes: Vec<LaneId>,
    entries: Vec<i64>,
}

/// Minimum-cost path over the lane graph. Lateral changes happen at the
/// point where the current lane was entered and cost `LANE_CHANGE_PENALTY`;
/// ties are broken by the lexicographic sequence of lane ids. Lanes in
/// `avoid` are never entered.
pub fn plan_route(
    graph: &LaneGraph,
    start: &Waypoint,
    destination: &Waypoint,
    avoid: &BTreeSet<LaneId>,
) -> Result<Route, RouteError> {
    let start_lane = graph.get(&start.lane).ok_or_else(|| RouteError::UnknownLane(start.lane.clone()))?;
    graph
        .get(&destination.lane)
        .ok_or_else(|| RouteError::UnknownLane(destination.lane.clone()))?;
    let penalty = micros(LANE_CHANGE_PENALTY);

    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Label { cost: 0, lanes: vec![start_lane.id.clone()], entries: vec![micros(start.s)] }));
    let mut settled: HashSet<(LaneId, i64)> = HashSet::new();
    let mut best_final: Option<Label> = None;

    while let Some(Reverse(label)) = heap.pop() {
        if best_final.as_ref().is_some_and(|b| label.cost > b.cost) {
            break;
        }
        let lane_id = label.lanes.last().unwrap().clone();
        let entry = *label.entries.last().unwrap();
        if label.lanes.len() > 1 && lane_id == "__done__" {
            if best_final.as_ref().is_none_or(|b| label < *b) {
                best_final = Some(label);
            }
            continue;
        }
        if !settled.insert((lane_id.clone(), entry)) {
            continue;
        }
        let lane = graph.get(&lane_id).unwrap();
        let entry_m = entry as f64 / 1e6;

        if lane_id == destination.lane && micros(destination.s) >= entry {
            let mut done = label.clone();
            done.cost += micros(destination.s) - entry;
            done.lanes.push("__done__".into());
            done.entries.push(0);
            heap.push(Reverse(done));
        }
        for succ in &lane.successors {
            if avoid.contains(succ) || label.lanes.contains(succ) {
                continue;
            }
            let mut next = label.clone();
            next.cost += micros(lane.length()) - entry;
            next.lanes.push(succ.clone());
            next.entries.push(0);
            heap.push(Reverse(next));
        }
        for left in [true, false] {
            let Some(nb) = graph.neighbor(&lane_id, left) else { continue };
            if avoid.contains(&nb.id) || label.lanes.contains(&nb.id) {
                continue;
            }
            let p = lane.centerline.point_at(entry_m, 0.0);
            let s = nb.centerline.project(p).s.clamp(0.0, nb.length());
            let mut next = label.clone();
            next.cost += penalty;
            next.lanes.push(nb.id.clone());
            next.entries.push(micros(s));
            heap.push(Reverse(next));
        }
    }

    let best = best_final.ok_or_else(|| RouteError::NoRoute {
        from: format!("{}@{:.1}", start.lane, start.s),
        to: format!("{}@{:.1}", destination.lane, destination.s),
    })?;
    Ok(Route::from_label(graph, &best, destination))
}

impl Route {
    fn from_label(graph: &LaneGraph, label: &Label, destination: &Waypoint) -> Route {
        let n = label.lanes.len() - 1; // trailing sentinel
        let mut legs = Vec::with_capacity(n);
        for i in 0..n {
            let lane = graph.get(&label.lanes[i]).unwrap();
            let entry = label.entries[i] as f64 / 1e6;
            let exit = if i == n - 1 {
                destination.s
            } else if lane.successors.contains(&label.lanes[i + 1]) {
                lane.length()
            } else {
                entry
            };
            legs.push(LaneLeg { lane: lane.id.clone(), entry, exit });
        }
        Route::from_legs(graph, legs, label.cost as f64 / 1e6)
    }

    pub fn from_legs(graph: &LaneGraph, legs: Vec<LaneLeg>, cost: f64) -> Route {
        let mut waypoints = Vec::new();
        let mut points = Vec::new();
        let mut cumulative = Vec::new();
        let mut arc = 0.0;
        for leg in &legs {
            let lane: &Lane = graph.get(&leg.lane).unwrap();
            let mut s = leg.entry;
            let mut first = true;
            loop {
                let at = s.min(leg.exit);
                if !first {
                    arc += at - waypoints.last().map(|w: &Waypoint| w.s).unwrap_or(at);
                }
                waypoints.push(Waypoint { lane: leg.lane.clone(), s: at });
                points.push(lane.centerline.point_at(at, 0.0));
                cumulative.push(arc);
                first = false;
                if at >= leg.exit - 1e-9 {
                    break;
                }
                s = at + WAYPOINT_SPACING;
            }
        }
        Route { waypoints, legs, points, cumulative, cost }
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    pub fn destination(&self) -> &Waypoint {
        self.waypoints.last().expect("route has waypoints")
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn lanes(&self) -> impl Iterator<Item = &LaneId> {
        self.legs.iter().map(|l| &l.lane)
    }

    pub fn arc_at(&self, index: usize) -> f64 {
        self.cumulative[index]
    }

    /// Projects `p` onto the route near `hint`; returns (waypoint index, arc length).
    pub fn locate(&self, p: Vec2, hint: usize) -> (usize, f64) {
        let lo = hint.saturating_sub(10);
        let hi = (hint + 60).min(self.points.len());
        let mut best = (hint.min(self.points.len() - 1), f64::INFINITY);
        for i in lo..hi {
            let d = (self.points[i] - p).norm();
            if d < best.1 - 1e-12 {
                best = (i, d);
            }
        }
        let i = best.0;
        let mut arc = self.cumulative[i];
        // refine within the adjacent same-lane segment
        for (a, b) in [(i, i + 1), (i.wrapping_sub(1), i)] {
            if a >= self.points.len() || b >= self.points.len() || self.waypoints[a].lane != self.waypoints[b].lane {
                continue;
            }
            let seg = self.points[b] - self.points[a];
            let len = seg.norm();
            if len < 1e-9 {
                continue;
            }
            let t = (p - self.points[a]).dot(seg) / (len * len);
            if (0.0..=1.0).contains(&t) {
                arc = self.cumulative[a] + t * (self.cumulative[b] - self.cumulative[a]);
                break;
            }
        }
        (i, arc)
    }

    /// Lane the route occupies at arc length `arc` (looking `lookahead` metres ahead).
    pub fn lane_at(&self, arc: f64, lookahead: f64) -> &LaneId {
        let idx = self.cumulative.partition_point(|c| *c <= arc + lookahead);
        &self.waypoints[idx.saturating_sub(1)].lane
    }

    /// Waypoint position where the route is at arc length `arc`.
    pub fn point_at_arc(&self, arc: f64) -> Vec2 {
        let idx = self.cumulative.partition_point(|c| *c <= arc);
        self.points[idx.saturating_sub(1)]
    }

    /// Checks that consecutive waypoints are on the same, successor or neighbor lanes.
    pub fn is_feasible(&self, graph: &LaneGraph) -> bool {
        self.waypoints.windows(2).all(|w| {
            let (a, b) = (&w[0], &w[1]);
            if a.lane == b.lane {
                return true;
            }
            let Some(la) = graph.get(&a.lane) else { return false };
            la.successors.contains(&b.lane) || la.left.as_ref() == Some(&b.lane) || la.right.as_ref() == Some(&b.lane)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{LaneDirection, LaneSpec};

    fn lane(id: &str, y: f64, x0: f64, x1: f64, left: Option<&str>, right: Option<&str>, succ: &[&str]) -> LaneSpec {
        LaneSpec {
            id: id.into(),
            centerline: vec![Vec2::new(x0, y), Vec2::new(x1, y)],
            width: 3.5,
            direction: LaneDirection::Forward,
            left: left.map(Into::into),
            right: right.map(Into::into),
            successors: succ.iter().map(|s| s.to_string()).collect(),
            speed_limit: 8.33,
        }
    }

    fn wp(lane: &str, s: f64) -> Waypoint {
        Waypoint { lane: lane.into(), s }
    }

    #[test]
    fn single_lane_route() {
        let g = LaneGraph::from_specs(&[lane("A", 0.0, 0.0, 100.0, None, None, &[])]).unwrap();
        let r = plan_route(&g, &wp("A", 10.0), &wp("A", 50.0), &BTreeSet::new()).unwrap();
        assert!(r.waypoints.iter().all(|w| w.lane == "A"));
        assert_eq!(r.waypoints.len(), 21);
        assert!((r.length() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn neighbor_destination_needs_one_transition() {
        let g = LaneGraph::from_specs(&[
            lane("L", 3.5, 0.0, 100.0, None, Some("R"), &[]),
            lane("R", 0.0, 0.0, 100.0, Some("L"), None, &[]),
        ])
        .unwrap();
        let r = plan_route(&g, &wp("R", 10.0), &wp("L", 60.0), &BTreeSet::new()).unwrap();
        let transitions = r.waypoints.windows(2).filter(|w| w[0].lane != w[1].lane).count();
        assert_eq!(transitions, 1);
        assert!((r.cost - 55.0).abs() < 1e-9);
        assert!(r.is_feasible(&g));
    }

    #[test]
    fn unreachable_destination() {
        let g = LaneGraph::from_specs(&[
            lane("A", 0.0, 0.0, 100.0, None, None, &[]),
            lane("B", 10.0, 0.0, 100.0, None, None, &[]),
        ])
        .unwrap();
        assert!(matches!(
            plan_route(&g, &wp("A", 0.0), &wp("B", 5.0), &BTreeSet::new()),
            Err(RouteError::NoRoute { .. })
        ));
        // behind the start on the same lane
        assert!(plan_route(&g, &wp("A", 50.0), &wp("A", 5.0), &BTreeSet::new()).is_err());
    }

    #[test]
    fn avoid_forces_detour() {
        let g = LaneGraph::from_specs(&[
            lane("L1", 3.5, 0.0, 50.0, None, Some("R1"), &["L2"]),
            lane("L2", 3.5, 50.0, 100.0, None, Some("R2"), &[]),
            lane("R1", 0.0, 0.0, 50.0, Some("L1"), None, &["R2"]),
            lane("R2", 0.0, 50.0, 100.0, Some("L2"), None, &[]),
        ])
        .unwrap();
        let direct = plan_route(&g, &wp("R1", 10.0), &wp("R2", 40.0), &BTreeSet::new()).unwrap();
        assert_eq!(direct.lanes().cloned().collect::<Vec<_>>(), vec!["R1", "R2"]);
        let avoid: BTreeSet<_> = ["R2".to_string()].into();
        assert!(plan_route(&g, &wp("R1", 10.0), &wp("R2", 40.0), &avoid).is_err());
        let detour = plan_route(&g, &wp("L1", 10.0), &wp("L2", 40.0), &["R1".to_string()].into()).unwrap();
        assert_eq!(detour.lanes().cloned().collect::<Vec<_>>(), vec!["L1", "L2"]);
    }
}
