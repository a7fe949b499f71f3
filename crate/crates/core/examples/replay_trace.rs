//! Records a run to a JSONL trace, reloads it and replays it against the
//! recorded state digests. Then corrupts one digest to show a divergence.

use std::path::Path;

use unstuck::harness::{replay, run_suite, ReplaySource, RunConfig};
use unstuck::trace::{write_lines, Trace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let mut cfg = RunConfig::load(&root.join("configs/oracle.toml"))?;
    cfg.output = None;
    cfg.scenarios = vec![root.join("scenarios/parked_obstacle.scn")];
    let outcome = run_suite(&cfg)?;

    let dir = std::env::temp_dir().join("unstuck-replay-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("trace.jsonl");
    write_lines(&path, &outcome.runs[0].lines)?;
    let mut trace = Trace::load(&path)?;
    println!("{}: {} ticks, {} reasoning records", path.display(), trace.ticks.len(), trace.reasoning.len());

    let report = replay(&trace, ReplaySource::Recorded)?;
    println!("replay clean={} compared={}", report.is_clean(), report.ticks_compared);

    trace.ticks[200].digest = "deadbeefdeadbeef".into();
    let report = replay(&trace, ReplaySource::Recorded)?;
    println!("after edit: {:?}", report.divergence);
    Ok(())
}
