//! Structured scene observation and its canonical line-oriented text form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::av::perception::{LaneRelation, Perception, StopKind};
use crate::world::{ActorKind, LightColor};

/// Participants beyond this count are cut from the text form.
pub const MAX_TP_LINES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TpType {
    Vehicle,
    Pedestrian,
    Obstacle,
}

impl TpType {
    pub fn as_str(self) -> &'static str {
        match self {
            TpType::Vehicle => "vehicle",
            TpType::Pedestrian => "pedestrian",
            TpType::Obstacle => "obstacle",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "vehicle" => TpType::Vehicle,
            "pedestrian" => TpType::Pedestrian,
            "obstacle" => TpType::Obstacle,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Stationary,
    Proceeding,
    Crossing,
    DoorOpen,
    Unknown,
}

impl Intent {
    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Stationary => "stationary",
            Intent::Proceeding => "proceeding",
            Intent::Crossing => "crossing",
            Intent::DoorOpen => "door_open",
            Intent::Unknown => "unknown",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "stationary" => Intent::Stationary,
            "proceeding" => Intent::Proceeding,
            "crossing" => Intent::Crossing,
            "door_open" => Intent::DoorOpen,
            "unknown" => Intent::Unknown,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightObs {
    pub color: LightColor,
    /// Front bumper to stop line (m).
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignObs {
    pub content: String,
    pub distance: f64,
    pub served: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkZoneObs {
    pub id: String,
    pub lane: LaneRelation,
    pub distance: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrafficControlObs {
    pub tl: Option<LightObs>,
    pub ts: Vec<SignObs>,
    pub wz: Vec<WorkZoneObs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantObs {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: TpType,
    pub intent: Intent,
    pub lane: LaneRelation,
    pub distance: f64,
    pub velocity: f64,
    pub traversable: Option<bool>,
    /// Some part of the participant intrudes into the ego path.
    pub blocking: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoObs {
    pub speed: f64,
    pub stationary_timer: f64,
    pub destination_flag: bool,
    pub lane: String,
    pub route_remaining: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObservation {
    pub ego: EgoObs,
    pub tc: TrafficControlObs,
    /// Sorted by distance, then id.
    pub tp: Vec<ParticipantObs>,
}

fn q1(x: f64) -> f64 {
    let v = (x * 10.0).round() / 10.0;
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

fn q2(x: f64) -> f64 {
    let v = (x * 100.0).round() / 100.0;
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Maps one tick of perception onto the observation. Values are quantized
/// to the precision of the text form so the two convert losslessly.
pub fn build_observation(p: &Perception) -> SceneObservation {
    let ego = EgoObs {
        speed: q2(p.ego.speed),
        stationary_timer: q2(p.ego.stationary_timer),
        destination_flag: p.ego.destination_flag,
        lane: p.ego.lane.clone(),
        route_remaining: q1(p.ego.route_remaining),
    };
    let tl = p.stop_lines.iter().find_map(|l| match l.kind {
        StopKind::Light { color } => Some(LightObs { color, distance: q1(l.gap.max(0.0)) }),
        _ => None,
    });
    let ts = p
        .stop_lines
        .iter()
        .filter_map(|l| match l.kind {
            StopKind::StopSign { served } => Some(SignObs { content: "stop".into(), distance: q1(l.gap.max(0.0)), served }),
            _ => None,
        })
        .collect();
    let wz = p
        .work_zones
        .iter()
        .map(|w| WorkZoneObs {
            id: w.id.clone(),
            lane: w.relation,
            distance: q1(w.gap),
            length: q1(w.far_distance - w.distance),
        })
        .collect();
    let mut tp: Vec<ParticipantObs> = p
        .objects
        .iter()
        .map(|o| {
            let kind = match o.kind {
                ActorKind::Vehicle | ActorKind::Ego => TpType::Vehicle,
                ActorKind::Pedestrian => TpType::Pedestrian,
                ActorKind::StaticObstacle => TpType::Obstacle,
            };
            let intent = if kind == TpType::Vehicle && o.door_open {
                Intent::DoorOpen
            } else if kind == TpType::Pedestrian && o.lateral_velocity > 0.1 {
                Intent::Crossing
            } else if o.velocity.abs() < 0.1 && o.lateral_velocity.abs() < 0.1 {
                Intent::Stationary
            } else {
                Intent::Proceeding
            };
            ParticipantObs {
                id: o.id.clone(),
                kind,
                intent,
                lane: o.relation,
                distance: q1(o.gap),
                velocity: q2(o.velocity),
                traversable: o.traversable,
                blocking: o.blocks_ego_path,
            }
        })
        .collect();
    tp.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id)));
    SceneObservation { ego, tc: TrafficControlObs { tl, ts, wz }, tp }
}

/// Canonical text: fixed line and field order, one decimal for metres, two
/// for speeds and seconds. At most `MAX_TP_LINES` participants are listed.
pub fn serialize_observation(obs: &SceneObservation) -> String {
    let mut out = String::new();
    let e = &obs.ego;
    let _ = writeln!(
        out,
        "ego speed={:.2} stationary_timer={:.2} destination_flag={} lane={} route_remaining={:.1}",
        e.speed, e.stationary_timer, e.destination_flag, e.lane, e.route_remaining
    );
    match &obs.tc.tl {
        Some(l) => {
            let _ = writeln!(out, "tl color={} distance={:.1}", l.color.as_str(), l.distance);
        }
        None => out.push_str("tl none\n"),
    }
    for s in &obs.tc.ts {
        let _ = writeln!(out, "ts content={} distance={:.1} served={}", s.content, s.distance, s.served);
    }
    for w in &obs.tc.wz {
        let _ = writeln!(out, "wz id={} lane={} distance={:.1} length={:.1}", w.id, w.lane.as_str(), w.distance, w.length);
    }
    let _ = writeln!(out, "tp_count={}", obs.tp.len());
    for t in obs.tp.iter().take(MAX_TP_LINES) {
        let trav = match t.traversable {
            Some(true) => "true",
            Some(false) => "false",
            None => "unknown",
        };
        let _ = writeln!(
            out,
            "tp id={} type={} intent={} lane={} distance={:.1} velocity={:.2} traversable={} blocking={}",
            t.id,
            t.kind.as_str(),
            t.intent.as_str(),
            t.lane.as_str(),
            t.distance,
            t.velocity,
            trav,
            t.blocking
        );
    }
    if obs.tp.len() > MAX_TP_LINES {
        out.push_str("truncated=true\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("observation line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

/// Parsed text form; `tp_count` may exceed `obs.tp.len()` when truncated.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedObservation {
    pub obs: SceneObservation,
    pub tp_count: usize,
    pub truncated: bool,
}

fn fields(rest: &str, line: usize) -> Result<Vec<(&str, &str)>, ParseError> {
    rest.split_whitespace()
        .map(|kv| {
            kv.split_once('=').ok_or_else(|| ParseError { line, message: format!("expected key=value, got {kv:?}") })
        })
        .collect()
}

struct Fields<'a> {
    items: Vec<(&'a str, &'a str)>,
    line: usize,
}

impl<'a> Fields<'a> {
    fn get(&self, key: &str) -> Result<&'a str, ParseError> {
        self.items
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| ParseError { line: self.line, message: format!("missing {key}") })
    }

    fn num(&self, key: &str) -> Result<f64, ParseError> {
        let v = self.get(key)?;
        v.parse().map_err(|_| ParseError { line: self.line, message: format!("{key}: bad number {v:?}") })
    }

    fn flag(&self, key: &str) -> Result<bool, ParseError> {
        match self.get(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            v => Err(ParseError { line: self.line, message: format!("{key}: bad flag {v:?}") }),
        }
    }

    fn with<T>(&self, key: &str, f: impl Fn(&str) -> Option<T>) -> Result<T, ParseError> {
        let v = self.get(key)?;
        f(v).ok_or_else(|| ParseError { line: self.line, message: format!("{key}: unexpected {v:?}") })
    }
}

pub fn parse_observation(text: &str) -> Result<ParsedObservation, ParseError> {
    let mut ego = None;
    let mut tc = TrafficControlObs::default();
    let mut tp = Vec::new();
    let mut tp_count = None;
    let mut truncated = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        if let Some(n) = raw.strip_prefix("tp_count=") {
            tp_count = Some(n.parse().map_err(|_| ParseError { line, message: "bad tp_count".into() })?);
            continue;
        }
        if raw == "truncated=true" {
            truncated = true;
            continue;
        }
        if raw == "tl none" {
            continue;
        }
        let (tag, rest) = raw.split_once(' ').unwrap_or((raw, ""));
        let f = Fields { items: fields(rest, line)?, line };
        match tag {
            "ego" => {
                ego = Some(EgoObs {
                    speed: f.num("speed")?,
                    stationary_timer: f.num("stationary_timer")?,
                    destination_flag: f.flag("destination_flag")?,
                    lane: f.get("lane")?.to_string(),
                    route_remaining: f.num("route_remaining")?,
                })
            }
            "tl" => {
                let color = f.with("color", |c| match c {
                    "red" => Some(LightColor::Red),
                    "yellow" => Some(LightColor::Yellow),
                    "green" => Some(LightColor::Green),
                    _ => None,
                })?;
                tc.tl = Some(LightObs { color, distance: f.num("distance")? });
            }
            "ts" => tc.ts.push(SignObs {
                content: f.get("content")?.to_string(),
                distance: f.num("distance")?,
                served: f.flag("served")?,
            }),
            "wz" => tc.wz.push(WorkZoneObs {
                id: f.get("id")?.to_string(),
                lane: f.with("lane", LaneRelation::parse)?,
                distance: f.num("distance")?,
                length: f.num("length")?,
            }),
            "tp" => tp.push(ParticipantObs {
                id: f.get("id")?.to_string(),
                kind: f.with("type", TpType::parse)?,
                intent: f.with("intent", Intent::parse)?,
                lane: f.with("lane", LaneRelation::parse)?,
                distance: f.num("distance")?,
                velocity: f.num("velocity")?,
                traversable: f.with("traversable", |v| match v {
                    "true" => Some(Some(true)),
                    "false" => Some(Some(false)),
                    "unknown" => Some(None),
                    _ => None,
                })?,
                blocking: f.flag("blocking")?,
            }),
            other => return Err(ParseError { line, message: format!("unknown line tag {other:?}") }),
        }
    }
    let ego = ego.ok_or_else(|| ParseError { line: 0, message: "missing ego line".into() })?;
    let tp_count = tp_count.ok_or_else(|| ParseError { line: 0, message: "missing tp_count".into() })?;
    Ok(ParsedObservation { obs: SceneObservation { ego, tc, tp }, tp_count, truncated })
}
