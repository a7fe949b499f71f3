//! The assembled stack: perceive, decide, control.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::world::scenario::Waypoint;
use crate::world::{ControlCommand, LaneId, WorldState};

use super::control::{ControlConfig, ControlInput, Controller};
use super::decision::{DecisionConfig, DecisionModule, DecisionOutput, DecisionSource};
use super::idm::IdmParams;
use super::perception::{Perceiver, Perception, PerceptionConfig};
use super::route::{plan_route, Route, RouteError};
use super::Behavior;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AvConfig {
    pub perception: PerceptionConfig,
    pub decision: DecisionConfig,
    pub control: ControlConfig,
    pub idm: IdmParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackOutput {
    pub decision: DecisionOutput,
    pub command: ControlCommand,
    /// Infeasible behavior or controller failure; the vehicle holds a stop.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AvStack {
    pub config: AvConfig,
    destination: Waypoint,
    route: Route,
    perceiver: Perceiver,
    decision: DecisionModule,
    controller: Controller,
}

impl AvStack {
    pub fn new(world: &WorldState, start: &Waypoint, destination: &Waypoint, config: AvConfig) -> Result<Self, RouteError> {
        let route = plan_route(&world.graph, start, destination, &BTreeSet::new())?;
        Ok(Self {
            config,
            destination: destination.clone(),
            route,
            perceiver: Perceiver::new(config.perception),
            decision: DecisionModule::new(config.decision, config.idm),
            controller: Controller::new(config.control),
        })
    }

    pub fn route(&self) -> &Route {
        &self.route
    }

    pub fn destination(&self) -> &Waypoint {
        &self.destination
    }

    /// Swaps the active route (after replanning).
    pub fn replace_route(&mut self, route: Route) {
        self.route = route;
        self.perceiver.reset_route();
    }

    /// Replans from `start` to the original destination without entering `avoid`.
    pub fn replan(&self, world: &WorldState, start: &Waypoint, avoid: &BTreeSet<LaneId>) -> Result<Route, RouteError> {
        plan_route(&world.graph, start, &self.destination, avoid)
    }

    pub fn install_plan(&mut self, plan: Vec<Behavior>, p: &Perception) -> u64 {
        self.decision.install(plan, p)
    }

    pub fn override_active(&self) -> bool {
        self.decision.active_plan().is_some()
    }

    pub fn active_plan(&self) -> Option<&super::decision::PlanProgress> {
        self.decision.active_plan()
    }

    pub fn perceive(&mut self, world: &WorldState) -> Perception {
        self.perceiver.perceive(world, &self.route)
    }

    /// Decision and control for one tick given this tick's perception.
    pub fn act(&mut self, world: &WorldState, p: &Perception) -> StackOutput {
        let hold = |error: String, behavior: Behavior| StackOutput {
            decision: DecisionOutput {
                behavior,
                source: DecisionSource::Override,
                lane_change_target: None,
                ignore: BTreeSet::new(),
            },
            command: ControlCommand { brake: 1.0, ..ControlCommand::IDLE },
            error: Some(error),
        };
        let decision = match self.decision.decide(p, &world.graph, world.dt) {
            Ok(d) => d,
            Err(e) => return hold(e.to_string(), Behavior::Stop),
        };
        let input = ControlInput {
            perception: p,
            graph: &world.graph,
            vehicle: &world.vehicle,
            idm: &self.config.idm,
            decision: &self.config.decision,
            lane_change_target: decision.lane_change_target.as_ref(),
            ignore: &decision.ignore,
            dt: world.dt,
        };
        match self.controller.control(&decision.behavior, &input) {
            Ok(command) => StackOutput { decision, command, error: None },
            Err(e) => {
                self.decision.clear_override();
                hold(e.to_string(), Behavior::Stop)
            }
        }
    }

    /// Perceive, decide and control in one call.
    pub fn step(&mut self, world: &WorldState) -> (Perception, StackOutput) {
        let p = self.perceive(world);
        let out = self.act(world, &p);
        (p, out)
    }
}
