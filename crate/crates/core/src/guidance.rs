//! Passenger guidance: a per-run message queue and a keyword grammar that
//! turns free text into behavior directives.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub const MAX_GUIDANCE_CHARS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceSource {
    Cli,
    Service,
    Script,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceMessage {
    pub run_id: String,
    /// Simulated time at which the message arrived (s).
    pub received: f64,
    pub text: String,
    pub source: GuidanceSource,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GuidanceError {
    #[error("run {0} is not active")]
    RunNotActive(String),
    #[error("guidance text is empty")]
    Empty,
    #[error("guidance text exceeds {MAX_GUIDANCE_CHARS} characters")]
    TooLong,
}

#[derive(Debug, Default)]
struct QueueState {
    active: bool,
    now: f64,
    pending: Vec<GuidanceMessage>,
    consumed: usize,
}

/// Shared between the sim loop and whoever delivers messages. Latest
/// message wins; older pending ones are reported as superseded.
#[derive(Debug)]
pub struct GuidanceQueue {
    run_id: String,
    state: Mutex<QueueState>,
}

/// A message handed to a reasoning request.
#[derive(Debug, Clone, PartialEq)]
pub struct Taken {
    pub message: GuidanceMessage,
    pub superseded: Vec<GuidanceMessage>,
}

impl GuidanceQueue {
    pub fn new(run_id: impl Into<String>) -> Self {
        Self { run_id: run_id.into(), state: Mutex::new(QueueState { active: true, ..Default::default() }) }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Advances the clock used to stamp incoming messages.
    pub fn set_time(&self, t: f64) {
        let mut s = self.lock();
        s.now = s.now.max(t);
    }

    pub fn close(&self) {
        self.lock().active = false;
    }

    pub fn enqueue(&self, text: &str, source: GuidanceSource) -> Result<GuidanceMessage, GuidanceError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(GuidanceError::Empty);
        }
        if text.chars().count() > MAX_GUIDANCE_CHARS {
            return Err(GuidanceError::TooLong);
        }
        let mut s = self.lock();
        if !s.active {
            return Err(GuidanceError::RunNotActive(self.run_id.clone()));
        }
        let msg = GuidanceMessage { run_id: self.run_id.clone(), received: s.now, text: text.to_string(), source };
        s.pending.push(msg.clone());
        Ok(msg)
    }

    pub fn has_pending(&self) -> bool {
        !self.lock().pending.is_empty()
    }

    /// Consumes the latest pending message.
    pub fn take(&self) -> Option<Taken> {
        let mut s = self.lock();
        let message = s.pending.pop()?;
        let superseded = std::mem::take(&mut s.pending);
        s.consumed += 1 + superseded.len();
        Some(Taken { message, superseded })
    }

    pub fn consumed(&self) -> usize {
        self.lock().consumed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    ChangeLaneLeft,
    ChangeLaneRight,
    ProceedOver,
    Wait,
    Reverse,
    IgnoreObstacle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directive {
    pub verb: Verb,
    /// Object word the clause refers to, e.g. `bag`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    /// Number in the clause, e.g. seconds to wait or metres to back up.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amount: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Matched,
    Unmatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceInterpretation {
    pub directives: Vec<Directive>,
    pub confidence: Confidence,
}

impl GuidanceInterpretation {
    pub fn has(&self, verb: Verb) -> bool {
        self.directives.iter().any(|d| d.verb == verb)
    }
}

// Checked in order; the first phrase found in a clause decides its verb.
const GRAMMAR: &[(&[&str], Verb)] = &[
    (&["drive over", "go over", "run over", "drive through", "go through"], Verb::ProceedOver),
    (&["it's just", "its just", "just trash", "trash", "bag", "harmless"], Verb::IgnoreObstacle),
    (&["back up", "reverse"], Verb::Reverse),
    (&["wait"], Verb::Wait),
    (&["left"], Verb::ChangeLaneLeft),
    (&["right"], Verb::ChangeLaneRight),
];

const OBJECTS: &[&str] = &["bag", "trash", "debris", "box", "cone", "car", "truck", "door", "obstacle", "pedestrian"];

fn words(clause: &str) -> Vec<String> {
    clause
        .to_lowercase()
        .replace(['\u{2019}', '`'], "'")
        .split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '.'))
        .map(|w| w.trim_matches(|c| c == '.' || c == '\'').to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

fn contains_phrase(words: &[String], phrase: &str) -> bool {
    let p: Vec<&str> = phrase.split(' ').collect();
    words.windows(p.len()).any(|w| w.iter().zip(&p).all(|(a, b)| a == b))
}

/// Case-insensitive keyword interpretation. Clauses split on commas and
/// "then"; each clause yields at most one directive.
pub fn interpret_keywords(text: &str) -> GuidanceInterpretation {
    let lowered = text.to_lowercase();
    let mut directives = Vec::new();
    for part in lowered.split([',', ';']) {
        let ws = words(part);
        for clause in ws.split(|w| w == "then") {
            let clause = clause.to_vec();
            let verb = GRAMMAR.iter().find(|(phrases, _)| phrases.iter().any(|p| contains_phrase(&clause, p)));
            if let Some((_, verb)) = verb {
                directives.push(Directive {
                    verb: *verb,
                    object: clause.iter().find(|w| OBJECTS.contains(&w.as_str())).cloned(),
                    amount: clause.iter().find_map(|w| w.parse::<f64>().ok().filter(|x| x.is_finite())),
                });
            }
        }
    }
    let confidence = if directives.is_empty() { Confidence::Unmatched } else { Confidence::Matched };
    GuidanceInterpretation { directives, confidence }
}
