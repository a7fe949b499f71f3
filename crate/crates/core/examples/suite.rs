//! Runs the bundled suite under baseline, recovery and guided configurations
//! and prints the comparison table.

use std::path::Path;

use unstuck::harness::{run_suite, RunConfig};
use unstuck::metrics::render_table;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut reports = vec![];
    for name in ["baseline", "oracle", "guided"] {
        let mut cfg = RunConfig::load(&dir.join(format!("{name}.toml")))?;
        cfg.output = None;
        let outcome = run_suite(&cfg)?;
        for run in &outcome.report.runs {
            println!(
                "{:<10} {:<22} success={:<5} rc={:.3} ds={:.3} interventions={} t={:.1}s {}",
                name,
                run.scenario,
                run.success,
                run.rc,
                run.ds,
                run.interventions,
                run.sim_duration,
                run.infractions.iter().map(|i| i.kind.as_str()).collect::<Vec<_>>().join(",")
            );
        }
        reports.push(outcome.report);
    }
    print!("{}", render_table(&reports));
    Ok(())
}
