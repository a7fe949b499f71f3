use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{Polyline, Projection, Vec2};

pub type LaneId = String;

pub const DEFAULT_LANE_WIDTH: f64 = 3.5;
pub const DEFAULT_SPEED_LIMIT: f64 = 8.33;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LaneDirection {
    #[default]
    Forward,
    Opposite,
}

/// Lane description as it appears in a scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub id: LaneId,
    pub centerline: Vec<Vec2>,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default)]
    pub direction: LaneDirection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<LaneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<LaneId>,
    #[serde(default)]
    pub successors: Vec<LaneId>,
    #[serde(default = "default_speed_limit")]
    pub speed_limit: f64,
}

fn default_width() -> f64 {
    DEFAULT_LANE_WIDTH
}

fn default_speed_limit() -> f64 {
    DEFAULT_SPEED_LIMIT
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: LaneId,
    pub centerline: Polyline,
    pub width: f64,
    pub direction: LaneDirection,
    pub left: Option<LaneId>,
    pub right: Option<LaneId>,
    pub successors: Vec<LaneId>,
    pub speed_limit: f64,
}

impl Lane {
    pub fn length(&self) -> f64 {
        self.centerline.length()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LaneGraphError {
    #[error("lane {lane}: {source}")]
    Geometry {
        lane: LaneId,
        source: crate::geometry::PolylineError,
    },
    #[error("duplicate lane id {0}")]
    DuplicateLane(LaneId),
    #[error("lane {lane}: {field} references unknown lane {target}")]
    Dangling {
        lane: LaneId,
        field: &'static str,
        target: LaneId,
    },
    #[error("lanes {0} and {1}: neighbor relation is not symmetric")]
    Asymmetric(LaneId, LaneId),
    #[error("lane {0}: invalid width or speed limit")]
    BadAttribute(LaneId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneGraph {
    lanes: BTreeMap<LaneId, Lane>,
}

impl LaneGraph {
    pub fn from_specs(specs: &[LaneSpec]) -> Result<Self, LaneGraphError> {
        let mut lanes = BTreeMap::new();
        for spec in specs {
            if !(spec.width > 0.0) || !(spec.speed_limit > 0.0) {
                return Err(LaneGraphError::BadAttribute(spec.id.clone()));
            }
            let centerline =
                Polyline::new(spec.centerline.clone()).map_err(|source| LaneGraphError::Geometry {
                    lane: spec.id.clone(),
                    source,
                })?;
            let lane = Lane {
                id: spec.id.clone(),
                centerline,
                width: spec.width,
                direction: spec.direction,
                left: spec.left.clone(),
                right: spec.right.clone(),
                successors: spec.successors.clone(),
                speed_limit: spec.speed_limit,
            };
            if lanes.insert(spec.id.clone(), lane).is_some() {
                return Err(LaneGraphError::DuplicateLane(spec.id.clone()));
            }
        }
        let graph = Self { lanes };
        graph.validate()?;
        Ok(graph)
    }

    fn validate(&self) -> Result<(), LaneGraphError> {
        for lane in self.lanes.values() {
            let refs = lane
                .left
                .iter()
                .map(|t| ("left", t))
                .chain(lane.right.iter().map(|t| ("right", t)))
                .chain(lane.successors.iter().map(|t| ("successors", t)));
            for (field, target) in refs {
                if !self.lanes.contains_key(target) {
                    return Err(LaneGraphError::Dangling {
                        lane: lane.id.clone(),
                        field,
                        target: target.clone(),
                    });
                }
            }
            if let Some(left) = &lane.left {
                let other = &self.lanes[left];
                if other.direction == lane.direction && other.right.as_ref() != Some(&lane.id) {
                    return Err(LaneGraphError::Asymmetric(lane.id.clone(), left.clone()));
                }
            }
            if let Some(right) = &lane.right {
                let other = &self.lanes[right];
                if other.direction == lane.direction && other.left.as_ref() != Some(&lane.id) {
                    return Err(LaneGraphError::Asymmetric(lane.id.clone(), right.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Lane> {
        self.lanes.get(id)
    }

    /// Lanes in lexicographic id order.
    pub fn lanes(&self) -> impl Iterator<Item = &Lane> {
        self.lanes.values()
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.lanes.contains_key(id)
    }

    /// Same-direction neighbor on the given side, if any.
    pub fn neighbor(&self, id: &str, left: bool) -> Option<&Lane> {
        let lane = self.get(id)?;
        let n = if left { lane.left.as_ref() } else { lane.right.as_ref() }?;
        let other = self.get(n)?;
        (other.direction == lane.direction).then_some(other)
    }

    /// Finds the lane a point belongs to. Among lanes whose footprint contains
    /// the point, the one with the smallest lateral offset wins; `hint` breaks
    /// ties, then lane id. Falls back to the nearest centerline when the point
    /// is off-road.
    pub fn locate(&self, p: Vec2, hint: Option<&str>) -> Option<(&Lane, Projection)> {
        let mut best: Option<(bool, f64, bool, &Lane, Projection)> = None;
        for lane in self.lanes.values() {
            let pr = lane.centerline.project(p);
            let within_s = pr.s >= -1e-6 && pr.s <= lane.length() + 1e-6;
            let inside = within_s && pr.d.abs() <= lane.width / 2.0 + 1e-9;
            let along_gap = if pr.s < 0.0 {
                -pr.s
            } else if pr.s > lane.length() {
                pr.s - lane.length()
            } else {
                0.0
            };
            let dist = pr.d.abs() + along_gap;
            let hinted = hint == Some(lane.id.as_str());
            let better = match &best {
                None => true,
                Some((b_inside, b_dist, b_hinted, _, _)) => {
                    if inside != *b_inside {
                        inside
                    } else if (dist - b_dist).abs() > 1e-9 {
                        dist < *b_dist
                    } else {
                        hinted && !b_hinted
                    }
                }
            };
            if better {
                best = Some((inside, dist, hinted, lane, pr));
            }
        }
        best.map(|(_, _, _, lane, pr)| (lane, pr))
    }

    /// Builds the longitudinal corridor starting at `lane`: the lane itself
    /// followed by successors chosen by `pick`, up to `max_len` metres.
    pub fn corridor(&self, lane: &str, max_len: f64, mut pick: impl FnMut(&Lane) -> Option<LaneId>) -> Corridor {
        let mut segments = Vec::new();
        let mut offset = 0.0;
        let mut current = self.get(lane);
        while let Some(l) = current {
            if segments.iter().any(|(id, _): &(LaneId, f64)| id == &l.id) {
                break;
            }
            segments.push((l.id.clone(), offset));
            offset += l.length();
            if offset > max_len {
                break;
            }
            current = pick(l)
                .or_else(|| l.successors.iter().min().cloned())
                .and_then(|id| self.get(&id));
        }
        Corridor { segments }
    }
}

/// A chain of successor lanes treated as one longitudinal axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Corridor {
    /// (lane id, arc-length offset of that lane's start within the chain)
    pub segments: Vec<(LaneId, f64)>,
}

impl Corridor {
    /// Projects onto the corridor: returns (lane id, chain arc length, lateral offset).
    pub fn project<'g>(&self, graph: &'g LaneGraph, p: Vec2) -> Option<(&'g Lane, f64, f64)> {
        let mut best: Option<(f64, &'g Lane, f64, f64)> = None;
        let last = self.segments.len().saturating_sub(1);
        for (i, (id, offset)) in self.segments.iter().enumerate() {
            let lane = graph.get(id)?;
            let pr = lane.centerline.project(p);
            let lo = if i == 0 { f64::NEG_INFINITY } else { -1e-6 };
            let hi = if i == last { f64::INFINITY } else { lane.length() + 1e-6 };
            if pr.s < lo || pr.s > hi {
                continue;
            }
            let score = pr.d.abs();
            if best.as_ref().is_none_or(|(b, ..)| score < *b - 1e-9) {
                best = Some((score, lane, offset + pr.s, pr.d));
            }
        }
        best.map(|(_, l, s, d)| (l, s, d))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.segments.iter().any(|(l, _)| l == id)
    }

    pub fn offset_of(&self, id: &str) -> Option<f64> {
        self.segments.iter().find(|(l, _)| l == id).map(|(_, o)| *o)
    }
}
