//! Owns all recovery state for one run: gating, the single outstanding
//! request, simulated latency and delivery into the stack.

use std::collections::VecDeque;
use std::sync::mpsc;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::av::{AvStack, Perception};
use crate::guidance::GuidanceQueue;
use crate::reasoning::{LatencyModel, Prompts, ReasoningBackend};
use crate::world::WorldState;

use super::apply::{apply_recovery, check_stale, map_digest};
use super::detector::{is_immobilized, DetectorConfig};
use super::observation::build_observation;
use super::pipeline::{run_pipeline, PipelineContext, TraceRecord};
use super::{RecoveryPlan, SolverOutput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    pub detector: DetectorConfig,
    /// Minimum simulated time between requests unless new guidance arrives (s).
    pub cooldown: f64,
    pub latency: LatencyModel,
    /// Block the sim loop until the backend answers at the due tick.
    pub lockstep: bool,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { detector: DetectorConfig::default(), cooldown: 5.0, latency: LatencyModel::default(), lockstep: true }
    }
}

/// Where answers come from: a live backend, or the records of an earlier run.
pub enum Responder {
    Live(Arc<dyn ReasoningBackend>),
    Recorded(VecDeque<TraceRecord>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SolverStatus {
    Idle,
    Detecting,
    Reasoning { since: u64 },
    PlanActive { plan_id: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub requested: bool,
    /// Record finished on this tick.
    pub completed: Option<TraceRecord>,
    pub installed: Option<(u64, RecoveryPlan)>,
    pub status: SolverStatus,
}

struct Pending {
    request_tick: u64,
    due_tick: u64,
    superseded: Vec<String>,
    rx: Option<mpsc::Receiver<(SolverOutput, TraceRecord)>>,
    result: Option<(SolverOutput, TraceRecord)>,
}

pub struct RecoveryCoordinator {
    pub config: RecoveryConfig,
    responder: Responder,
    prompts: Arc<Prompts>,
    guidance: Option<Arc<GuidanceQueue>>,
    seed: u64,
    last_request: Option<f64>,
    pending: Option<Pending>,
    records: Vec<TraceRecord>,
}

impl RecoveryCoordinator {
    pub fn new(config: RecoveryConfig, responder: Responder, prompts: Arc<Prompts>, seed: u64) -> Self {
        Self { config, responder, prompts, guidance: None, seed, last_request: None, pending: None, records: vec![] }
    }

    pub fn with_guidance(mut self, queue: Arc<GuidanceQueue>) -> Self {
        self.guidance = Some(queue);
        self
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn status(&self, stack: &AvStack, p: &Perception) -> SolverStatus {
        if let Some(pending) = &self.pending {
            SolverStatus::Reasoning { since: pending.request_tick }
        } else if let Some(plan) = stack.active_plan() {
            SolverStatus::PlanActive { plan_id: plan.id }
        } else if p.ego.speed.abs() < self.config.detector.v_min && !p.ego.destination_flag && p.ego.stationary_timer > 0.0 {
            SolverStatus::Detecting
        } else {
            SolverStatus::Idle
        }
    }

    fn gate(&self, world: &WorldState, stack: &AvStack, p: &Perception) -> bool {
        if self.pending.is_some() || !is_immobilized(&p.ego, &self.config.detector) {
            return false;
        }
        // An active plan is left alone unless it has stalled for a full cooldown.
        if stack.override_active() && p.ego.stationary_timer < self.config.cooldown {
            return false;
        }
        let fresh_guidance = self.guidance.as_ref().is_some_and(|g| g.has_pending());
        fresh_guidance || self.last_request.is_none_or(|t| world.t() - t >= self.config.cooldown - 1e-9)
    }

    fn issue(&mut self, world: &WorldState, p: &Perception) {
        let tick = world.tick;
        let taken = self.guidance.as_ref().and_then(|g| g.take());
        let superseded = taken.as_ref().map_or_else(Vec::new, |t| t.superseded.iter().map(|m| m.text.clone()).collect());
        let due_tick = tick + self.config.latency.ticks(self.seed, tick, world.dt);
        let mut pending = Pending { request_tick: tick, due_tick, superseded, rx: None, result: None };
        match &mut self.responder {
            Responder::Live(backend) => {
                let obs = build_observation(p);
                let ctx = PipelineContext {
                    tick,
                    map_digest: map_digest(p),
                    graph: world.graph.clone(),
                    prompts: self.prompts.clone(),
                };
                let backend = backend.clone();
                let message = taken.map(|t| t.message);
                let (tx, rx) = mpsc::channel();
                std::thread::spawn(move || {
                    let _ = tx.send(run_pipeline(&obs, &ctx, message.as_ref(), backend.as_ref()));
                });
                pending.rx = Some(rx);
            }
            Responder::Recorded(queue) => {
                let result = match queue.pop_front() {
                    Some(mut rec) => {
                        if rec.request_tick != tick {
                            log::warn!("replay diverged: recorded request at tick {}, now {tick}", rec.request_tick);
                        }
                        // Keep the recorded delivery tick so free-running traces replay faithfully.
                        if let Some(d) = rec.delivered_tick {
                            pending.due_tick = d.max(tick);
                        }
                        rec.request_tick = tick;
                        rec.delivered_tick = None;
                        rec.events.clear();
                        rec.plan_id = None;
                        (rec.output.clone(), rec)
                    }
                    None => {
                        log::warn!("replay has no recorded response for the request at tick {tick}");
                        let obs = build_observation(p);
                        let mut rec = run_pipeline(
                            &obs,
                            &PipelineContext {
                                tick,
                                map_digest: map_digest(p),
                                graph: world.graph.clone(),
                                prompts: self.prompts.clone(),
                            },
                            None,
                            &Exhausted,
                        )
                        .1;
                        rec.superseded_guidance.clear();
                        (None, rec)
                    }
                };
                pending.result = Some(result);
            }
        }
        log::info!("reasoning requested at tick {tick}, due at {}", pending.due_tick);
        self.last_request = Some(world.t());
        self.pending = Some(pending);
    }

    /// Call once per tick after perception and before the stack acts.
    pub fn on_tick(&mut self, world: &WorldState, stack: &mut AvStack, p: &Perception) -> TickReport {
        if let Some(g) = &self.guidance {
            g.set_time(world.t());
        }
        let requested = self.gate(world, stack, p);
        if requested {
            self.issue(world, p);
        }
        let mut report = TickReport { requested, completed: None, installed: None, status: SolverStatus::Idle };
        if let Some(mut pending) = self.pending.take() {
            if world.tick >= pending.due_tick && pending.result.is_none() {
                if let Some(rx) = &pending.rx {
                    pending.result = if self.config.lockstep {
                        rx.recv().ok()
                    } else {
                        match rx.try_recv() {
                            Ok(r) => Some(r),
                            Err(mpsc::TryRecvError::Empty) => None,
                            Err(mpsc::TryRecvError::Disconnected) => {
                                log::error!("reasoning worker exited without a result");
                                Some((None, self.lost_record(&pending)))
                            }
                        }
                    };
                    if pending.result.is_none() && self.config.lockstep {
                        pending.result = Some((None, self.lost_record(&pending)));
                    }
                }
            }
            match (world.tick >= pending.due_tick, pending.result.take()) {
                (true, Some((output, mut record))) => {
                    record.delivered_tick = Some(world.tick);
                    record.superseded_guidance = pending.superseded;
                    if let Some(plan) = output {
                        match check_stale(&plan, p, stack) {
                            Some(reason) => {
                                log::info!("dropping stale plan: {reason}");
                                record.events.push(format!("stale_plan: {reason}"));
                            }
                            None => match apply_recovery(&plan, stack, world, p) {
                                Ok(id) => {
                                    record.plan_id = Some(id);
                                    record.events.push("applied".into());
                                    report.installed = Some((id, plan));
                                }
                                Err(e) => {
                                    log::warn!("recovery plan rejected: {e}");
                                    record.events.push(format!("replan_failed: {e}"));
                                }
                            },
                        }
                    }
                    self.records.push(record.clone());
                    report.completed = Some(record);
                }
                (_, result) => {
                    pending.result = result;
                    self.pending = Some(pending);
                }
            }
        }
        report.status = self.status(stack, p);
        report
    }

    fn lost_record(&self, pending: &Pending) -> TraceRecord {
        TraceRecord {
            request_tick: pending.request_tick,
            delivered_tick: None,
            branch: super::Branch::Autonomous,
            backend: "unknown".into(),
            prompt_hash: self.prompts.hash(),
            observation: String::new(),
            map_digest: String::new(),
            guidance: None,
            superseded_guidance: vec![],
            analysis: None,
            output: None,
            raw: vec![],
            retry_count: 0,
            error: Some("reasoning worker failed".into()),
            notes: vec![],
            events: vec![],
            plan_id: None,
        }
    }

    /// Flushes an unanswered request at the end of a run.
    pub fn finish(&mut self) -> Option<TraceRecord> {
        let mut pending = self.pending.take()?;
        let record = match pending.result.take() {
            Some((_, r)) => r,
            None => match pending.rx.as_ref().and_then(|rx| rx.try_recv().ok()) {
                Some((_, r)) => r,
                None => self.lost_record(&pending),
            },
        };
        let mut record = record;
        record.superseded_guidance = pending.superseded;
        record.events.push("run_ended_before_delivery".into());
        self.records.push(record.clone());
        Some(record)
    }
}

struct Exhausted;

impl ReasoningBackend for Exhausted {
    fn name(&self) -> &str {
        "replay"
    }

    fn reason(&self, _: &crate::reasoning::ReasoningRequest) -> Result<crate::reasoning::ReasoningResponse, crate::reasoning::BackendError> {
        Err(crate::reasoning::BackendError::Unavailable("no recorded response".into()))
    }
}
