//! Lossless run trace: one JSON object per line, tagged by `type`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::av::AvConfig;
use crate::guidance::GuidanceMessage;
use crate::metrics::InfractionEvent;
use crate::recovery::{RecoveryConfig, TraceRecord};
use crate::world::scenario::ScenarioDoc;

/// Bumped whenever stepping or the trace layout changes.
pub const TRACE_VERSION: &str = concat!("unstuck/", env!("CARGO_PKG_VERSION"), "/trace-1");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMode {
    #[default]
    Off,
    Oracle,
    Llm,
}

impl RecoveryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RecoveryMode::Off => "off",
            RecoveryMode::Oracle => "oracle",
            RecoveryMode::Llm => "llm",
        }
    }
}

impl std::str::FromStr for RecoveryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(RecoveryMode::Off),
            "oracle" => Ok(RecoveryMode::Oracle),
            "llm" => Ok(RecoveryMode::Llm),
            other => Err(format!("unknown recovery mode {other:?} (expected off, oracle or llm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: String,
    pub run_id: String,
    pub scenario: ScenarioDoc,
    pub recovery: RecoveryMode,
    pub recovery_config: RecoveryConfig,
    pub av_config: AvConfig,
    /// Effective world seed.
    pub seed: u64,
    pub prompt_hash: String,
    /// Initial route length (m).
    pub route_length: f64,
    pub dt: f64,
    pub time_budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickLine {
    pub tick: u64,
    pub t: f64,
    /// World digest before this tick's step.
    pub digest: String,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub behavior: String,
    pub source: String,
    pub steer: f64,
    pub throttle: f64,
    pub brake: f64,
    pub reverse: bool,
    pub route_remaining: f64,
    pub arrived: bool,
    /// Mean speed of moving vehicles near the ego, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nearby_speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub infractions: Vec<InfractionEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Arrived,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footer {
    pub end: EndReason,
    pub ticks: u64,
    pub sim_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceLine {
    Header(TraceHeader),
    Tick(TickLine),
    Guidance(GuidanceMessage),
    Reasoning(TraceRecord),
    Footer(Footer),
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace has no header")]
    MissingHeader,
}

/// A parsed trace, split by line type.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub ticks: Vec<TickLine>,
    pub guidance: Vec<GuidanceMessage>,
    pub reasoning: Vec<TraceRecord>,
    pub footer: Option<Footer>,
}

impl Trace {
    pub fn from_lines(lines: impl IntoIterator<Item = TraceLine>) -> Result<Trace, TraceError> {
        let mut header = None;
        let mut trace_ticks = vec![];
        let mut guidance = vec![];
        let mut reasoning = vec![];
        let mut footer = None;
        for line in lines {
            match line {
                TraceLine::Header(h) => header = Some(h),
                TraceLine::Tick(t) => trace_ticks.push(t),
                TraceLine::Guidance(g) => guidance.push(g),
                TraceLine::Reasoning(r) => reasoning.push(r),
                TraceLine::Footer(f) => footer = Some(f),
            }
        }
        Ok(Trace { header: header.ok_or(TraceError::MissingHeader)?, ticks: trace_ticks, guidance, reasoning, footer })
    }

    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        Self::read(text.as_bytes())
    }

    pub fn read(reader: impl std::io::Read) -> Result<Trace, TraceError> {
        let mut lines = vec![];
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str(&line).map_err(|e| TraceError::Parse { line: i + 1, message: e.to_string() })?;
            lines.push(parsed);
        }
        Self::from_lines(lines)
    }

    pub fn load(path: &Path) -> Result<Trace, TraceError> {
        Self::read(std::fs::File::open(path)?)
    }

    /// Interventions that put a plan on the vehicle.
    pub fn interventions(&self) -> usize {
        self.reasoning.iter().filter(|r| r.intervened()).count()
    }
}

pub fn write_lines(path: &Path, lines: &[TraceLine]) -> Result<(), TraceError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for line in lines {
        serde_json::to_writer(&mut w, line).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
