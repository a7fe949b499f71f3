//! Re-executes a recorded run and checks state digests tick by tick.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::reasoning::{Prompts, ReasoningBackend};
use crate::recovery::Responder;
use crate::trace::{RecoveryMode, Trace, TraceLine, TRACE_VERSION};
use crate::world::scenario::build;

use super::episode::{Episode, EpisodeSettings, TimedGuidance};
use super::HarnessError;

/// Where the replayed run gets reasoning answers.
pub enum ReplaySource {
    /// Feed the recorded responses back in order.
    Recorded,
    /// Ask this backend again (only meaningful for deterministic backends).
    Recompute(Arc<dyn ReasoningBackend>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub tick: u64,
    pub expected: Option<String>,
    pub actual: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub run_id: String,
    pub ticks_compared: usize,
    pub divergence: Option<Divergence>,
    /// Reasoning records whose output differs from the recording.
    pub output_mismatches: usize,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.divergence.is_none() && self.output_mismatches == 0
    }
}

pub fn replay(trace: &Trace, source: ReplaySource) -> Result<ReplayReport, HarnessError> {
    let h = &trace.header;
    if h.version != TRACE_VERSION {
        return Err(HarnessError::Version { expected: TRACE_VERSION.into(), found: h.version.clone() });
    }
    let scenario = build(h.scenario.clone())
        .map_err(|error| HarnessError::Scenario { path: format!("<trace {}>", h.run_id).into(), error })?;
    let prompts = Arc::new(Prompts::default());
    if prompts.hash() != h.prompt_hash {
        log::warn!("trace was recorded with different prompts ({} vs {})", h.prompt_hash, prompts.hash());
    }
    let settings = EpisodeSettings {
        run_id: h.run_id.clone(),
        recovery: h.recovery,
        recovery_config: h.recovery_config,
        av_config: h.av_config,
        seed: Some(h.seed),
        prompts,
        penalties: Default::default(),
    };
    let responder = match (&source, h.recovery) {
        (_, RecoveryMode::Off) => None,
        (ReplaySource::Recorded, _) => Some(Responder::Recorded(trace.reasoning.iter().cloned().collect::<VecDeque<_>>())),
        (ReplaySource::Recompute(b), _) => Some(Responder::Live(b.clone())),
    };
    let script = trace
        .guidance
        .iter()
        .map(|g| TimedGuidance { at: g.received, text: g.text.clone(), source: g.source })
        .collect();
    let mut ep = Episode::new(&scenario, settings, responder, script)?;

    let mut compared = 0;
    let mut divergence = None;
    for (i, expected) in trace.ticks.iter().enumerate() {
        if ep.end().is_some() {
            divergence = Some(Divergence { tick: expected.tick, expected: Some(expected.digest.clone()), actual: None });
            break;
        }
        let got = ep.step().tick;
        compared = i + 1;
        if got.digest != expected.digest || got.tick != expected.tick {
            divergence = Some(Divergence { tick: expected.tick, expected: Some(expected.digest.clone()), actual: Some(got.digest) });
            break;
        }
    }
    if divergence.is_none() && ep.end().is_none() && trace.footer.is_some() {
        let got = ep.step().tick;
        divergence = Some(Divergence { tick: got.tick, expected: None, actual: Some(got.digest) });
    }

    let replayed: Vec<_> = ep
        .lines()
        .iter()
        .filter_map(|l| match l {
            TraceLine::Reasoning(r) => Some(r),
            _ => None,
        })
        .collect();
    let output_mismatches = trace
        .reasoning
        .iter()
        .zip(replayed.iter())
        .filter(|(a, b)| a.output != b.output || a.request_tick != b.request_tick)
        .count()
        + trace.reasoning.len().abs_diff(replayed.len());

    Ok(ReplayReport { run_id: h.run_id.clone(), ticks_compared: compared, divergence, output_mismatches })
}
