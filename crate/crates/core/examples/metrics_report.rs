//! Scores runs from their traces and aggregates them into a report.

use std::path::Path;

use unstuck::harness::{run_suite, RunConfig};
use unstuck::metrics::{aggregate, infraction_score, score_run, InfractionEvent, InfractionKind, MetricsConfig, PenaltyTable};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let penalties = PenaltyTable::default();
    let events: Vec<InfractionEvent> = [InfractionKind::RedLight, InfractionKind::CollisionVehicle]
        .into_iter()
        .enumerate()
        .map(|(i, kind)| InfractionEvent { tick: i as u64, kind, penalty: penalties.penalty(kind), other: None })
        .collect();
    println!("red light then vehicle collision: infraction score {:.3}", infraction_score(&events));

    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let mut cfg = RunConfig::load(&root.join("configs/baseline.toml"))?;
    cfg.output = None;
    let outcome = run_suite(&cfg)?;
    let mut scored = vec![];
    for run in &outcome.runs {
        let m = score_run(&run.trace(), &MetricsConfig::default())?;
        println!("{:<22} rc={:.3} is={:.3} ds={:.3} efficiency={:.3} comfort={:.3}", m.scenario, m.rc, m.is_, m.ds, m.efficiency, m.comfort);
        scored.push(m);
    }
    print!("{}", aggregate("baseline", &scored)?.table());
    Ok(())
}
