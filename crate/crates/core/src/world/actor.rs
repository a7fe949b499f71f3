use serde::{Deserialize, Serialize};

use crate::geometry::{Obb, Vec2};

use super::lane::LaneId;

pub type ActorId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Ego,
    Vehicle,
    Pedestrian,
    StaticObstacle,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    #[default]
    Left,
    Right,
}

/// How far an open door reaches out from the body, and its longitudinal extent.
pub const DOOR_REACH: f64 = 1.2;
pub const DOOR_HALF_LENGTH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub id: ActorId,
    pub kind: ActorKind,
    pub pose: Pose,
    /// Longitudinal speed along the lane (ego: along its heading, negative when reversing).
    pub speed: f64,
    pub lane_id: LaneId,
    pub s: f64,
    /// Lateral offset from the lane centerline, left positive.
    pub d: f64,
    /// Lateral speed for crossing pedestrians, left positive.
    pub lateral_speed: f64,
    pub half_length: f64,
    pub half_width: f64,
    pub traversable: bool,
    /// Whether perception is able to report the traversable flag.
    pub traversable_observable: bool,
    pub door_open: bool,
    pub door_side: Side,
}

impl Actor {
    pub fn body(&self) -> Obb {
        Obb {
            center: self.pose.position(),
            heading: self.pose.heading,
            half_length: self.half_length,
            half_width: self.half_width,
        }
    }

    /// Footprint of the open door, if any.
    pub fn door(&self) -> Option<Obb> {
        if !self.door_open || self.kind != ActorKind::Vehicle {
            return None;
        }
        let fwd = Vec2::from_heading(self.pose.heading);
        let side = match self.door_side {
            Side::Left => 1.0,
            Side::Right => -1.0,
        };
        let lateral = fwd.left_normal() * (side * (self.half_width + DOOR_REACH / 2.0));
        let center = self.pose.position() + fwd * (self.half_length * 0.3) + lateral;
        Some(Obb {
            center,
            heading: self.pose.heading,
            half_length: DOOR_HALF_LENGTH,
            half_width: DOOR_REACH / 2.0,
        })
    }

    /// Body plus door, when open.
    pub fn footprint(&self) -> Vec<Obb> {
        let mut v = vec![self.body()];
        v.extend(self.door());
        v
    }
}
