//! Closed-loop scoring of a finished trace and suite aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::wrap_angle;
use crate::trace::{EndReason, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfractionKind {
    CollisionPedestrian,
    CollisionVehicle,
    CollisionStatic,
    RedLight,
    RouteDeviation,
    Timeout,
}

impl InfractionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InfractionKind::CollisionPedestrian => "collision_pedestrian",
            InfractionKind::CollisionVehicle => "collision_vehicle",
            InfractionKind::CollisionStatic => "collision_static",
            InfractionKind::RedLight => "red_light",
            InfractionKind::RouteDeviation => "route_deviation",
            InfractionKind::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfractionEvent {
    pub tick: u64,
    pub kind: InfractionKind,
    /// Multiplier applied to the infraction score.
    pub penalty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub other: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyTable {
    pub collision_pedestrian: f64,
    pub collision_vehicle: f64,
    pub collision_static: f64,
    pub red_light: f64,
    pub route_deviation: f64,
    pub timeout: f64,
}

impl Default for PenaltyTable {
    fn default() -> Self {
        Self {
            collision_pedestrian: 0.50,
            collision_vehicle: 0.60,
            collision_static: 0.65,
            red_light: 0.70,
            route_deviation: 0.70,
            timeout: 1.0,
        }
    }
}

impl PenaltyTable {
    pub fn penalty(&self, kind: InfractionKind) -> f64 {
        match kind {
            InfractionKind::CollisionPedestrian => self.collision_pedestrian,
            InfractionKind::CollisionVehicle => self.collision_vehicle,
            InfractionKind::CollisionStatic => self.collision_static,
            InfractionKind::RedLight => self.red_light,
            InfractionKind::RouteDeviation => self.route_deviation,
            InfractionKind::Timeout => self.timeout,
        }
    }
}

/// Stand-in comfort limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComfortBounds {
    pub accel: f64,
    pub jerk: f64,
    pub yaw_rate: f64,
}

impl Default for ComfortBounds {
    fn default() -> Self {
        Self { accel: 3.0, jerk: 5.0, yaw_rate: 0.6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub penalties: PenaltyTable,
    pub comfort: ComfortBounds,
    pub efficiency_cap: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { penalties: PenaltyTable::default(), comfort: ComfortBounds::default(), efficiency_cap: 1.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub category: String,
    pub rc: f64,
    #[serde(rename = "is")]
    pub is_: f64,
    pub ds: f64,
    pub success: bool,
    pub efficiency: f64,
    pub comfort: f64,
    pub infractions: Vec<InfractionEvent>,
    pub interventions: usize,
    pub sim_duration: f64,
    pub ticks: u64,
    /// Host time; not serialized so that metrics files stay reproducible.
    #[serde(skip)]
    pub wall_duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("trace is incomplete (no footer)")]
    IncompleteTrace,
    #[error("cannot aggregate an empty suite")]
    EmptySuite,
}

/// Product of penalty multipliers, starting at 1.
/// Product of penalties. Multiplied in sorted order so the result does not
/// depend on the order the infractions happened in.
pub fn infraction_score(infractions: &[InfractionEvent]) -> f64 {
    let mut p: Vec<f64> = infractions.iter().map(|i| i.penalty).collect();
    p.sort_by(f64::total_cmp);
    p.into_iter().product()
}

pub fn score_run(trace: &Trace, cfg: &MetricsConfig) -> Result<RunMetrics, MetricsError> {
    let footer = trace.footer.as_ref().ok_or(MetricsError::IncompleteTrace)?;
    let h = &trace.header;
    let arrived = footer.end == EndReason::Arrived;

    let rc = if arrived {
        1.0
    } else {
        trace
            .ticks
            .iter()
            .map(|t| (1.0 - t.route_remaining / h.route_length).clamp(0.0, 1.0))
            .fold(0.0, f64::max)
    };
    let infractions: Vec<InfractionEvent> = trace.ticks.iter().flat_map(|t| t.infractions.iter().cloned()).collect();
    let is_ = infraction_score(&infractions);

    let ratios: Vec<f64> = trace
        .ticks
        .iter()
        .filter_map(|t| t.nearby_speed.filter(|v| *v > 0.0).map(|v| (t.speed.abs() / v).min(cfg.efficiency_cap)))
        .collect();
    // No comparable traffic means nothing to be slow relative to.
    let efficiency = if ratios.is_empty() { 1.0 } else { ratios.iter().sum::<f64>() / ratios.len() as f64 };

    Ok(RunMetrics {
        scenario: h.scenario.meta.name.clone(),
        category: h.scenario.meta.category.as_str().to_string(),
        rc,
        is_,
        ds: rc * is_,
        success: arrived && infractions.is_empty() && footer.sim_time <= h.time_budget,
        efficiency,
        comfort: comfort(trace, &cfg.comfort),
        infractions,
        interventions: trace.interventions(),
        sim_duration: footer.sim_time,
        ticks: footer.ticks,
        wall_duration: None,
    })
}

/// Fraction of ticks whose finite-difference acceleration, jerk and yaw rate
/// are all within bounds.
fn comfort(trace: &Trace, b: &ComfortBounds) -> f64 {
    let ticks = &trace.ticks;
    if ticks.is_empty() {
        return 1.0;
    }
    let dt = trace.header.dt;
    let accel: Vec<Option<f64>> =
        (0..ticks.len()).map(|i| (i > 0).then(|| (ticks[i].speed - ticks[i - 1].speed) / dt)).collect();
    let ok = (0..ticks.len())
        .filter(|&i| {
            let a_ok = accel[i].is_none_or(|a| a.abs() <= b.accel + 1e-9);
            let j_ok = match (i > 1).then(|| (accel[i], accel[i - 1])) {
                Some((Some(a), Some(prev))) => ((a - prev) / dt).abs() <= b.jerk + 1e-9,
                _ => true,
            };
            let y_ok = i == 0 || (wrap_angle(ticks[i].heading - ticks[i - 1].heading) / dt).abs() <= b.yaw_rate + 1e-9;
            a_ok && j_ok && y_ok
        })
        .count();
    ok as f64 / ticks.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub runs: usize,
    /// Mean driving score ×100.
    pub ds: f64,
    /// Success rate in percent.
    pub sr: f64,
    pub successes: usize,
    pub efficiency: f64,
    pub comfort: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub label: String,
    pub overall: ReportRow,
    pub categories: BTreeMap<String, ReportRow>,
    /// Sorted by scenario name.
    pub runs: Vec<RunMetrics>,
}

fn row(runs: &[&RunMetrics]) -> ReportRow {
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&RunMetrics) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / n;
    let successes = runs.iter().filter(|r| r.success).count();
    ReportRow {
        runs: runs.len(),
        ds: 100.0 * mean(&|r| r.ds),
        sr: 100.0 * successes as f64 / n,
        successes,
        efficiency: 100.0 * mean(&|r| r.efficiency),
        comfort: 100.0 * mean(&|r| r.comfort),
    }
}

pub fn aggregate(label: &str, runs: &[RunMetrics]) -> Result<SuiteReport, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::EmptySuite);
    }
    let mut sorted = runs.to_vec();
    sorted.sort_by(|a, b| a.scenario.cmp(&b.scenario));
    let mut by_cat: BTreeMap<String, Vec<&RunMetrics>> = BTreeMap::new();
    for r in &sorted {
        by_cat.entry(r.category.clone()).or_default().push(r);
    }
    let categories = by_cat.iter().map(|(k, v)| (k.clone(), row(v))).collect();
    Ok(SuiteReport { label: label.to_string(), overall: row(&sorted.iter().collect::<Vec<_>>()), categories, runs: sorted })
}

impl SuiteReport {
    /// Aligned columns: DS, SR(%), Efficiency, Comfort.
    pub fn table(&self) -> String {
        render_table(std::slice::from_ref(self))
    }
}

/// One overall row per report, then per-category rows.
pub fn render_table(reports: &[SuiteReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<28} {:>8} {:>8} {:>11} {:>8}", "configuration", "DS", "SR(%)", "Efficiency", "Comfort");
    for r in reports {
        let o = &r.overall;
        let _ = writeln!(out, "{:<28} {:>8.2} {:>8.2} {:>11.2} {:>8.2}", r.label, o.ds, o.sr, o.efficiency, o.comfort);
    }
    for r in reports {
        let _ = writeln!(out);
        let _ = writeln!(out, "[{}]", r.label);
        for (cat, c) in &r.categories {
            let name = format!("  {cat} ({})", c.runs);
            let _ = writeln!(out, "{:<28} {:>8.2} {:>8.2} {:>11.2} {:>8.2}", name, c.ds, c.sr, c.efficiency, c.comfort);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(ds: f64, success: bool, category: &str) -> RunMetrics {
        RunMetrics {
            scenario: format!("s{ds}"),
            category: category.into(),
            rc: ds,
            is_: 1.0,
            ds,
            success,
            efficiency: 1.0,
            comfort: 1.0,
            infractions: vec![],
            interventions: 0,
            sim_duration: 1.0,
            ticks: 20,
            wall_duration: None,
        }
    }

    #[test]
    fn aggregate_arithmetic() {
        let r = aggregate("x", &[run(1.0, true, "a")]).unwrap();
        assert_eq!((r.overall.ds, r.overall.sr), (100.0, 100.0));
        let r = aggregate("x", &[run(1.0, true, "a"), run(0.5, false, "b")]).unwrap();
        assert_eq!((r.overall.ds, r.overall.sr), (75.0, 50.0));
        assert_eq!(r.categories["b"].sr, 0.0);
        assert!(aggregate("x", &[]).is_err());
        assert!(r.table().contains("75.00"));
    }

    #[test]
    fn vehicle_collision_at_eighty_percent() {
        let p = PenaltyTable::default();
        let inf = [InfractionEvent { tick: 3, kind: InfractionKind::CollisionVehicle, penalty: p.collision_vehicle, other: None }];
        assert!((0.8 * infraction_score(&inf) - 0.48).abs() < 1e-12);
    }
}
