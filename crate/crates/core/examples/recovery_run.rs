//! Steps one scenario with the rule oracle and prints each reasoning call
//! and installed plan as it happens.
//!
//! `cargo run --example recovery_run -- open_door`

use std::path::Path;
use std::sync::Arc;

use unstuck::harness::{load_scenario_file, Episode, EpisodeSettings};
use unstuck::reasoning::RuleOracle;
use unstuck::recovery::Responder;
use unstuck::trace::RecoveryMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "open_door".into());
    let sc = load_scenario_file(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.scn")))?;
    let settings = EpisodeSettings::new(format!("{name}-example"), RecoveryMode::Oracle);
    let mut ep = Episode::new(&sc, settings, Some(Responder::Live(Arc::new(RuleOracle::default()))), vec![])?;
    println!("budget {:.1} s, route {:.1} m", ep.header().time_budget, ep.header().route_length);
    loop {
        let step = ep.step();
        let t = step.tick.t;
        if step.requested {
            println!("{t:6.2}s  immobilized, reasoning requested");
        }
        if let Some(rec) = &step.reasoning {
            let cause = rec.analysis.map(|a| a.cause.as_str()).unwrap_or("-");
            let plan = rec.output.as_ref().map(|p| p.tokens().join(", ")).unwrap_or_else(|| "none".into());
            println!("{t:6.2}s  answer after {} ticks: cause={cause} plan=[{plan}]", rec.delivered_tick.unwrap_or(0) - rec.request_tick);
        }
        if let Some((id, plan)) = &step.installed {
            println!("{t:6.2}s  plan {id} installed, replanning={}", plan.route_replanning);
        }
        if let Some(end) = step.end {
            println!("{t:6.2}s  {end:?}");
            break;
        }
    }
    Ok(())
}
