use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;

use super::lane::LaneId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightColor {
    Red,
    Yellow,
    Green,
}

impl LightColor {
    pub fn as_str(self) -> &'static str {
        match self {
            LightColor::Red => "red",
            LightColor::Yellow => "yellow",
            LightColor::Green => "green",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    pub id: String,
    /// Stop-line position.
    pub position: Vec2,
    pub lanes: Vec<LaneId>,
    pub phases: Vec<(LightColor, f64)>,
    #[serde(default)]
    pub offset: f64,
}

impl TrafficLight {
    pub fn cycle(&self) -> f64 {
        self.phases.iter().map(|(_, d)| d).sum()
    }

    /// Phase at time `t`; phases are half-open `[start, end)` intervals
    /// repeating from `t = 0`.
    pub fn color_at(&self, t: f64) -> LightColor {
        let cycle = self.cycle();
        let mut tt = (t + self.offset).rem_euclid(cycle);
        if cycle - tt < 1e-9 {
            tt = 0.0;
        }
        let mut start = 0.0;
        for (color, dur) in &self.phases {
            let end = start + dur;
            if tt + 1e-9 < end {
                return *color;
            }
            start = end;
        }
        self.phases[0].0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignContent {
    Stop,
    Yield,
    SpeedLimit(f64),
}

impl SignContent {
    pub fn token(&self) -> String {
        match self {
            SignContent::Stop => "stop".into(),
            SignContent::Yield => "yield".into(),
            SignContent::SpeedLimit(v) => format!("speed_limit({v:.2})"),
        }
    }

    pub fn parse_token(s: &str) -> Option<Self> {
        match s {
            "stop" => Some(SignContent::Stop),
            "yield" => Some(SignContent::Yield),
            _ => s
                .strip_prefix("speed_limit(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|v| v.parse().ok())
                .map(SignContent::SpeedLimit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSign {
    pub id: String,
    pub position: Vec2,
    pub content: SignContent,
    /// Lanes the sign applies to; empty means every lane it sits beside.
    #[serde(default)]
    pub lanes: Vec<LaneId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkZone {
    pub id: String,
    pub lane: LaneId,
    /// Arc-length interval `[start, end]` on `lane`.
    pub s: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrafficControlState {
    #[serde(default)]
    pub lights: Vec<TrafficLight>,
    #[serde(default)]
    pub signs: Vec<TrafficSign>,
    #[serde(default)]
    pub work_zones: Vec<WorkZone>,
}
