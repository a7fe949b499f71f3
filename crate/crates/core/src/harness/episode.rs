//! One closed-loop run, stepped a tick at a time. Used by the batch runner,
//! replay and the live service.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::av::perception::StopKind;
use crate::av::{AvConfig, AvStack, Perception, StackOutput};
use crate::geometry::Vec2;
use crate::guidance::{GuidanceError, GuidanceMessage, GuidanceQueue, GuidanceSource};
use crate::metrics::{InfractionEvent, InfractionKind, PenaltyTable};
use crate::reasoning::Prompts;
use crate::recovery::{AnalysisResult, RecoveryConfig, RecoveryCoordinator, RecoveryPlan, Responder, SolverStatus, TraceRecord};
use crate::trace::{EndReason, Footer, RecoveryMode, TickLine, TraceHeader, TraceLine, TRACE_VERSION};
use crate::world::{ActorKind, CollisionKind, LightColor, Scenario, WorldState};

use super::HarnessError;

/// Vehicles within this radius feed the efficiency reference speed (m).
pub const NEARBY_RADIUS: f64 = 30.0;
/// Lateral distance from the active route that counts as leaving it (m).
pub const ROUTE_DEVIATION_DISTANCE: f64 = 8.0;

#[derive(Debug, Clone)]
pub struct EpisodeSettings {
    pub run_id: String,
    pub recovery: RecoveryMode,
    pub recovery_config: RecoveryConfig,
    pub av_config: AvConfig,
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    pub prompts: Arc<Prompts>,
    pub penalties: PenaltyTable,
}

impl EpisodeSettings {
    pub fn new(run_id: impl Into<String>, recovery: RecoveryMode) -> Self {
        Self {
            run_id: run_id.into(),
            recovery,
            recovery_config: RecoveryConfig::default(),
            av_config: AvConfig::default(),
            seed: None,
            prompts: Arc::new(Prompts::default()),
            penalties: PenaltyTable::default(),
        }
    }
}

/// A message injected at a fixed simulated time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedGuidance {
    pub at: f64,
    pub text: String,
    pub source: GuidanceSource,
}

/// What happened during one tick.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub tick: TickLine,
    pub guidance: Vec<GuidanceMessage>,
    pub requested: bool,
    pub reasoning: Option<TraceRecord>,
    pub installed: Option<(u64, RecoveryPlan)>,
    pub status: SolverStatus,
    pub end: Option<EndReason>,
}

pub struct Episode {
    world: WorldState,
    stack: AvStack,
    coordinator: Option<RecoveryCoordinator>,
    queue: Arc<GuidanceQueue>,
    script: VecDeque<TimedGuidance>,
    header: TraceHeader,
    lines: Vec<TraceLine>,
    penalties: PenaltyTable,
    /// Red-light stop-line gaps seen on the previous tick.
    red_gaps: BTreeMap<String, f64>,
    off_route: bool,
    end: Option<EndReason>,
    status: SolverStatus,
    last_analysis: Option<AnalysisResult>,
    last_output: Option<StackOutput>,
}

/// Budget: twice the free-flow travel time plus a minute.
pub fn time_budget(route_length: f64, speed_limit: f64) -> f64 {
    2.0 * route_length / speed_limit + 60.0
}

fn distance_to_polyline(points: &[Vec2], p: Vec2) -> f64 {
    if points.len() == 1 {
        return (p - points[0]).norm();
    }
    points
        .windows(2)
        .map(|w| {
            let seg = w[1] - w[0];
            let len2 = seg.dot(seg);
            let u = if len2 > 0.0 { ((p - w[0]).dot(seg) / len2).clamp(0.0, 1.0) } else { 0.0 };
            (p - (w[0] + seg * u)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

impl Episode {
    /// `responder` must be present unless recovery is off.
    pub fn new(
        scenario: &Scenario,
        settings: EpisodeSettings,
        responder: Option<Responder>,
        script: Vec<TimedGuidance>,
    ) -> Result<Episode, HarnessError> {
        let mut world = scenario.world.clone();
        if let Some(seed) = settings.seed {
            world.seed = seed;
        }
        let stack = AvStack::new(&world, &scenario.route.start, &scenario.route.destination, settings.av_config)?;
        let queue = Arc::new(GuidanceQueue::new(settings.run_id.clone()));
        let coordinator = match (settings.recovery, responder) {
            (RecoveryMode::Off, _) => None,
            (_, None) => return Err(HarnessError::Config("recovery enabled without a reasoning backend".into())),
            (_, Some(r)) => Some(
                RecoveryCoordinator::new(settings.recovery_config, r, settings.prompts.clone(), world.seed)
                    .with_guidance(queue.clone()),
            ),
        };
        let route_length = stack.route().length();
        let speed_limit = stack
            .route()
            .lanes()
            .filter_map(|l| world.graph.get(l))
            .map(|l| l.speed_limit)
            .fold(f64::INFINITY, f64::min);
        let speed_limit = if speed_limit.is_finite() && speed_limit > 0.0 { speed_limit } else { crate::world::lane::DEFAULT_SPEED_LIMIT };
        let header = TraceHeader {
            version: TRACE_VERSION.to_string(),
            run_id: settings.run_id.clone(),
            scenario: scenario.doc.clone(),
            recovery: settings.recovery,
            recovery_config: settings.recovery_config,
            av_config: settings.av_config,
            seed: world.seed,
            prompt_hash: settings.prompts.hash(),
            route_length,
            dt: world.dt,
            time_budget: time_budget(route_length, speed_limit),
        };
        let mut script = script;
        script.sort_by(|a, b| a.at.total_cmp(&b.at));
        Ok(Episode {
            world,
            stack,
            coordinator,
            queue,
            script: script.into(),
            lines: vec![TraceLine::Header(header.clone())],
            header,
            penalties: settings.penalties,
            red_gaps: BTreeMap::new(),
            off_route: false,
            end: None,
            status: SolverStatus::Idle,
            last_analysis: None,
            last_output: None,
        })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn stack(&self) -> &AvStack {
        &self.stack
    }

    pub fn status(&self) -> SolverStatus {
        self.status
    }

    pub fn last_analysis(&self) -> Option<AnalysisResult> {
        self.last_analysis
    }

    pub fn last_output(&self) -> Option<&StackOutput> {
        self.last_output.as_ref()
    }

    pub fn end(&self) -> Option<EndReason> {
        self.end
    }

    pub fn lines(&self) -> &[TraceLine] {
        &self.lines
    }

    pub fn into_lines(self) -> Vec<TraceLine> {
        self.lines
    }

    /// Queues passenger guidance; it is stamped with the upcoming tick's time.
    pub fn guide(&mut self, text: &str, source: GuidanceSource) -> Result<GuidanceMessage, GuidanceError> {
        if self.end.is_some() {
            return Err(GuidanceError::RunNotActive(self.header.run_id.clone()));
        }
        self.queue.set_time(self.world.t());
        let msg = self.queue.enqueue(text, source)?;
        self.lines.push(TraceLine::Guidance(msg.clone()));
        Ok(msg)
    }

    fn nearby_speed(&self) -> Option<f64> {
        let ego = self.world.ego()?.pose.position();
        let speeds: Vec<f64> = self
            .world
            .actors
            .iter()
            .filter(|a| a.kind == ActorKind::Vehicle && a.speed > 0.1 && (a.pose.position() - ego).norm() <= NEARBY_RADIUS)
            .map(|a| a.speed)
            .collect();
        (!speeds.is_empty()).then(|| speeds.iter().sum::<f64>() / speeds.len() as f64)
    }

    fn infraction(&self, kind: InfractionKind, other: Option<String>) -> InfractionEvent {
        InfractionEvent { tick: self.world.tick, kind, penalty: self.penalties.penalty(kind), other }
    }

    fn detect(&mut self, p: &Perception) -> Vec<InfractionEvent> {
        let mut out = vec![];
        for e in &self.world.events {
            let kind = match e.kind {
                CollisionKind::Pedestrian => InfractionKind::CollisionPedestrian,
                CollisionKind::Vehicle => InfractionKind::CollisionVehicle,
                CollisionKind::Static => InfractionKind::CollisionStatic,
                CollisionKind::Traversal => continue,
            };
            out.push(self.infraction(kind, Some(e.other.clone())));
        }

        let mut red_gaps = BTreeMap::new();
        for line in &p.stop_lines {
            if let StopKind::Light { color: LightColor::Red } = line.kind {
                if line.gap < 0.0 && self.red_gaps.get(&line.id).is_some_and(|g| *g >= 0.0) {
                    out.push(self.infraction(InfractionKind::RedLight, Some(line.id.clone())));
                }
                red_gaps.insert(line.id.clone(), line.gap);
            }
        }
        self.red_gaps = red_gaps;

        let off = distance_to_polyline(self.stack.route().points(), p.ego.pose.position()) > ROUTE_DEVIATION_DISTANCE;
        if off && !self.off_route {
            out.push(self.infraction(InfractionKind::RouteDeviation, None));
        }
        self.off_route = off;
        out
    }

    /// Advances one tick. Panics if the run already ended.
    pub fn step(&mut self) -> StepReport {
        assert!(self.end.is_none(), "episode already ended");
        let t = self.world.t();
        self.queue.set_time(t);
        let mut guidance = vec![];
        while self.script.front().is_some_and(|g| g.at <= t + 1e-9) {
            let g = self.script.pop_front().unwrap();
            match self.guide(&g.text, g.source) {
                Ok(m) => guidance.push(m),
                Err(e) => log::warn!("scripted guidance at {:.2}s dropped: {e}", g.at),
            }
        }

        let p = self.stack.perceive(&self.world);
        let (requested, reasoning, installed) = match self.coordinator.as_mut() {
            Some(c) => {
                let r = c.on_tick(&self.world, &mut self.stack, &p);
                self.status = r.status;
                (r.requested, r.completed, r.installed)
            }
            None => (false, None, None),
        };
        if let Some(rec) = &reasoning {
            self.last_analysis = rec.analysis.or(self.last_analysis);
            self.lines.push(TraceLine::Reasoning(rec.clone()));
        }
        let out = self.stack.act(&self.world, &p);

        let mut infractions = self.detect(&p);
        let arrived = p.ego.destination_flag;
        let timed_out = !arrived && t >= self.header.time_budget - 1e-9;
        if timed_out {
            infractions.push(self.infraction(InfractionKind::Timeout, None));
        }
        let ego = self.world.ego().expect("scenario has an ego");
        let tick = TickLine {
            tick: self.world.tick,
            t,
            digest: self.world.digest(),
            x: ego.pose.x,
            y: ego.pose.y,
            heading: ego.pose.heading,
            speed: ego.speed,
            behavior: out.decision.behavior.token(),
            source: match out.decision.source {
                crate::av::DecisionSource::Baseline => "baseline".into(),
                crate::av::DecisionSource::Override => "override".into(),
            },
            steer: out.command.steer,
            throttle: out.command.throttle,
            brake: out.command.brake,
            reverse: out.command.reverse,
            route_remaining: p.ego.route_remaining,
            arrived,
            nearby_speed: self.nearby_speed(),
            error: out.error.clone(),
            infractions,
        };
        self.lines.push(TraceLine::Tick(tick.clone()));

        let end = if arrived {
            Some(EndReason::Arrived)
        } else if timed_out {
            Some(EndReason::Timeout)
        } else {
            self.world = self.world.step(&out.command);
            None
        };
        self.last_output = Some(out);
        if let Some(reason) = end {
            self.finish(reason);
        }
        StepReport { tick, guidance, requested, reasoning, installed, status: self.status, end }
    }

    fn finish(&mut self, reason: EndReason) {
        self.end = Some(reason);
        self.queue.close();
        if let Some(rec) = self.coordinator.as_mut().and_then(|c| c.finish()) {
            self.lines.push(TraceLine::Reasoning(rec));
        }
        self.status = SolverStatus::Idle;
        self.lines.push(TraceLine::Footer(Footer { end: reason, ticks: self.world.tick + 1, sim_time: self.world.t() }));
    }

    /// Steps until arrival or timeout.
    pub fn run_to_end(&mut self) -> EndReason {
        loop {
            if let Some(end) = self.step().end {
                return end;
            }
        }
    }
}
