//! Immobilization detection.

use serde::{Deserialize, Serialize};

use crate::av::{EgoStatus, V_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub v_min: f64,
    /// How long the ego must stay below `v_min` (s).
    pub hold_time: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { v_min: V_MIN, hold_time: 1.0 }
    }
}

/// True when the ego has been below `v_min` for at least `hold_time` and is
/// not at its destination.
pub fn is_immobilized(status: &EgoStatus, cfg: &DetectorConfig) -> bool {
    // half a tick of slack absorbs accumulated rounding in the timer
    !status.destination_flag && status.speed.abs() < cfg.v_min && status.stationary_timer >= cfg.hold_time - 1e-6
}
