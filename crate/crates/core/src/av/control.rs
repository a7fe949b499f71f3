//! Low-level controllers: PID lane keeping, IDM car following and the
//! dual-PID lane change.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::wrap_angle;
use crate::world::{ControlCommand, Corridor, LaneGraph, LaneId, VehicleParams};

use super::decision::{constraints, idm_accel, DecisionConfig, PathFilter};
use super::idm::IdmParams;
use super::perception::Perception;
use super::pid::{Pid, PidGains};
use super::Behavior;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub lateral: PidGains,
    /// Gain on heading error relative to the reference heading.
    pub heading_gain: f64,
    pub longitudinal: PidGains,
    /// Target lane-change duration at the starting speed (s).
    pub lane_change_time: f64,
    pub lane_change_min_length: f64,
    /// Speed floor used when sizing a lane change from low speed (m/s).
    pub lane_change_min_speed: f64,
    /// Ramp rate of the lane-change speed profile (m/s^2).
    pub speed_ramp: f64,
    /// Deceleration for a stop without a target point (m/s^2).
    pub stop_decel: f64,
    /// Jerk limit while ramping into an untargeted stop (m/s^3).
    pub stop_jerk: f64,
    /// Below this speed a stop engages the full brake.
    pub hold_speed: f64,
    pub reverse_speed: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            lateral: PidGains { kp: 0.8, ki: 0.0, kd: 0.3 },
            heading_gain: 1.0,
            longitudinal: PidGains { kp: 0.5, ki: 0.05, kd: 0.0 },
            lane_change_time: 3.0,
            lane_change_min_length: 12.0,
            lane_change_min_speed: 4.0,
            speed_ramp: 1.5,
            stop_decel: 3.0,
            stop_jerk: 4.0,
            hold_speed: 0.3,
            reverse_speed: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("lane change requested without a target lane")]
    NoTargetLane,
    #[error("lane {0} is not on the map")]
    UnknownLane(LaneId),
}

#[derive(Debug, Clone, PartialEq)]
struct LaneChangeRef {
    target: LaneId,
    d0: f64,
    length: f64,
    traveled: f64,
    speed_ref: f64,
}

/// Everything the controller reads for one tick.
#[derive(Debug, Clone, Copy)]
pub struct ControlInput<'a> {
    pub perception: &'a Perception,
    pub graph: &'a LaneGraph,
    pub vehicle: &'a VehicleParams,
    pub idm: &'a IdmParams,
    pub decision: &'a DecisionConfig,
    pub lane_change_target: Option<&'a LaneId>,
    pub ignore: &'a BTreeSet<String>,
    pub dt: f64,
}

/// Quintic smoothstep and its derivative.
fn quintic(tau: f64) -> (f64, f64) {
    let t = tau.clamp(0.0, 1.0);
    let q = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
    let dq = 30.0 * t * t * (1.0 - t) * (1.0 - t);
    (q, dq)
}

/// Owns controller state (PID integrators, lane-change reference) across ticks.
#[derive(Debug, Clone)]
pub struct Controller {
    pub config: ControlConfig,
    lateral: Pid,
    longitudinal: Pid,
    lateral_ref: Option<LaneId>,
    lane_change: Option<LaneChangeRef>,
    last_accel: f64,
}

impl Controller {
    pub fn new(config: ControlConfig) -> Self {
        Self {
            config,
            lateral: Pid::new(config.lateral),
            longitudinal: Pid::new(config.longitudinal),
            lateral_ref: None,
            lane_change: None,
            last_accel: 0.0,
        }
    }

    /// Steering that tracks offset `d_ref` (and reference heading `psi_ref`)
    /// relative to the corridor centerline.
    fn steer(&mut self, input: &ControlInput<'_>, corridor: &Corridor, d_ref: f64, psi_ref: f64) -> f64 {
        let ego = &input.perception.ego;
        let pos = ego.pose.position();
        let Some((lane, chain_s, d)) = corridor.project(input.graph, pos) else { return 0.0 };
        let key = corridor.segments.first().map(|(id, _)| id.clone());
        if key != self.lateral_ref {
            self.lateral.reset();
            self.lateral_ref = key;
        }
        let local = chain_s - corridor.offset_of(&lane.id).unwrap_or(0.0);
        let heading = lane.centerline.heading_at(local);
        let kappa = lane.centerline.curvature_at(local);
        let direction = if ego.speed < 0.0 { -1.0 } else { 1.0 };
        let feedforward = (input.vehicle.wheelbase * kappa).atan();
        let heading_error = wrap_angle(ego.pose.heading - heading - psi_ref);
        let feedback = self.lateral.update(d_ref - d, input.dt);
        let angle = feedforward + direction * (feedback - self.config.heading_gain * heading_error);
        (angle / input.vehicle.max_steer).clamp(-1.0, 1.0)
    }

    fn ego_corridor_steer(&mut self, input: &ControlInput<'_>) -> f64 {
        let corridor = input.perception.corridor.clone();
        self.steer(input, &corridor, 0.0, 0.0)
    }

    fn lane_keep_accel(&self, input: &ControlInput<'_>) -> f64 {
        let p = input.perception;
        let cons = constraints(p, input.decision, input.idm, input.ignore, PathFilter::EgoPath);
        let v0 = input.idm.desired_speed.unwrap_or(p.ego.speed_limit);
        idm_accel(&cons, p.ego.speed, v0, input.idm)
    }

    fn finish(&mut self, accel: f64, steer: f64, vehicle: &VehicleParams) -> ControlCommand {
        self.last_accel = accel;
        ControlCommand::from_accel(accel, steer, vehicle)
    }

    pub fn control(&mut self, behavior: &Behavior, input: &ControlInput<'_>) -> Result<ControlCommand, ControlError> {
        let p = input.perception;
        let v = p.ego.speed;
        if !behavior.is_lane_change() {
            self.lane_change = None;
        }
        if !matches!(behavior, Behavior::LaneChangeLeft | Behavior::LaneChangeRight | Behavior::Reverse { .. }) {
            self.longitudinal.reset();
        }
        match behavior {
            Behavior::LaneKeep | Behavior::ProceedThrough => {
                let steer = self.ego_corridor_steer(input);
                let accel = self.lane_keep_accel(input);
                Ok(self.finish(accel, steer, input.vehicle))
            }
            Behavior::LaneChangeLeft | Behavior::LaneChangeRight => {
                let target = input.lane_change_target.ok_or(ControlError::NoTargetLane)?;
                if input.graph.get(target).is_none() {
                    return Err(ControlError::UnknownLane(target.clone()));
                }
                let corridor = input.graph.corridor(target, 500.0, |_| None);
                let pos = p.ego.pose.position();
                let d_now = corridor.project(input.graph, pos).map_or(0.0, |(_, _, d)| d);
                if self.lane_change.as_ref().is_none_or(|lc| &lc.target != target) {
                    let length = self.config.lane_change_min_length.max(
                        self.config.lane_change_time * v.max(self.config.lane_change_min_speed),
                    );
                    self.lane_change =
                        Some(LaneChangeRef { target: target.clone(), d0: d_now, length, traveled: 0.0, speed_ref: v.max(0.0) });
                    self.longitudinal.reset();
                }
                let cfg = self.config;
                let lc = self.lane_change.as_mut().expect("lane change reference set");
                let (q, dq) = quintic(lc.traveled / lc.length);
                let d_ref = lc.d0 * (1.0 - q);
                let psi_ref = (-lc.d0 * dq / lc.length).atan();
                lc.traveled += v.max(0.0) * input.dt;
                let limit = input.graph.get(target).map_or(p.ego.speed_limit, |l| l.speed_limit);
                let v0 = input.idm.desired_speed.unwrap_or(limit);
                lc.speed_ref = (lc.speed_ref + cfg.speed_ramp * input.dt).min(v0);
                let speed_error = lc.speed_ref - v;
                let tracking = self.longitudinal.update(speed_error, input.dt);
                let cons = constraints(p, input.decision, input.idm, input.ignore, PathFilter::Lanes(&corridor));
                let accel = tracking.min(idm_accel(&cons, v, v0, input.idm));
                let steer = self.steer(input, &corridor, d_ref, psi_ref);
                Ok(self.finish(accel, steer, input.vehicle))
            }
            Behavior::Stop => {
                let steer = self.ego_corridor_steer(input);
                let cons = constraints(p, input.decision, input.idm, input.ignore, PathFilter::EgoPath);
                let targeted = cons.iter().any(|c| c.is_stationary() && c.kind != super::decision::ConstraintKind::Destination);
                let accel = if v.abs() < self.config.hold_speed {
                    -input.vehicle.max_brake
                } else if targeted {
                    let v0 = input.idm.desired_speed.unwrap_or(p.ego.speed_limit);
                    idm_accel(&cons, v, v0, input.idm).min(0.0)
                } else {
                    (self.last_accel - self.config.stop_jerk * input.dt).max(-self.config.stop_decel).min(0.0)
                };
                Ok(self.finish(accel, steer, input.vehicle))
            }
            Behavior::Wait { .. } => {
                let steer = self.ego_corridor_steer(input);
                let accel = if v.abs() < self.config.hold_speed {
                    -input.vehicle.max_brake
                } else {
                    (self.last_accel - self.config.stop_jerk * input.dt).max(-self.config.stop_decel).min(0.0)
                };
                Ok(self.finish(accel, steer, input.vehicle))
            }
            Behavior::Reverse { .. } => {
                self.last_accel = 0.0;
                if v > 0.05 {
                    return Ok(ControlCommand { steer: 0.0, throttle: 0.0, brake: 1.0, reverse: false });
                }
                let accel = self.longitudinal.update(self.config.reverse_speed - (-v), input.dt);
                let cmd = if accel >= 0.0 {
                    ControlCommand { steer: 0.0, throttle: accel / input.vehicle.max_accel, brake: 0.0, reverse: true }
                } else {
                    ControlCommand { steer: 0.0, throttle: 0.0, brake: -accel / input.vehicle.max_brake, reverse: true }
                };
                Ok(cmd.saturated())
            }
        }
    }
}
