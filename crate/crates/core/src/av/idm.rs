//! Intelligent Driver Model car-following law.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired speed; `None` uses the lane speed limit.
    #[serde(default)]
    pub desired_speed: Option<f64>,
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub exponent: i32,
    /// Lower clamp on the returned acceleration (positive number).
    pub emergency_decel: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: None,
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 2.0,
            comfort_decel: 3.0,
            exponent: 4,
            emergency_decel: 8.0,
        }
    }
}

impl IdmParams {
    /// Desired dynamic gap `s*` for own speed `v` and closing speed `dv`.
    pub fn desired_gap(&self, v: f64, dv: f64) -> f64 {
        let dynamic = v * self.time_headway + v * dv / (2.0 * (self.max_accel * self.comfort_decel).sqrt());
        self.min_gap + dynamic.max(0.0)
    }

    /// Acceleration for own speed `v`, desired speed `v0`, net gap to the
    /// leader (`None` on a free road) and closing speed `dv = v - v_lead`.
    pub fn accel(&self, v: f64, v0: f64, gap: Option<f64>, dv: f64) -> f64 {
        let free = 1.0 - (v.max(0.0) / v0).powi(self.exponent);
        let interaction = match gap {
            Some(s) => {
                let ratio = self.desired_gap(v.max(0.0), dv) / s.max(1e-3);
                ratio * ratio
            }
            None => 0.0,
        };
        (self.max_accel * (free - interaction)).clamp(-self.emergency_decel, self.max_accel)
    }

    /// Distance within which a stationary target at `standoff` metres of
    /// clearance starts to dominate the law.
    pub fn stopping_envelope(&self, v: f64, standoff: f64) -> f64 {
        standoff + self.desired_gap(v, v) - self.min_gap
    }
}
