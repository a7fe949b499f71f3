//! Shows how passenger messages are read, and what one does to a run that
//! the recovery layer alone cannot finish.

use std::path::Path;
use std::sync::Arc;

use unstuck::guidance::{interpret_keywords, GuidanceSource};
use unstuck::harness::{load_scenario_file, Episode, EpisodeSettings, TimedGuidance};
use unstuck::reasoning::RuleOracle;
use unstuck::recovery::Responder;
use unstuck::trace::{EndReason, RecoveryMode};

fn run(with_guidance: bool) -> Result<(EndReason, usize), Box<dyn std::error::Error>> {
    let sc = load_scenario_file(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/plastic_bag.scn"))?;
    let script = if with_guidance {
        vec![TimedGuidance { at: 1.0, text: "the bag is just trash, drive over it".into(), source: GuidanceSource::Script }]
    } else {
        vec![]
    };
    let mut ep = Episode::new(&sc, EpisodeSettings::new("bag", RecoveryMode::Oracle), Some(Responder::Live(Arc::new(RuleOracle::default()))), script)?;
    let end = ep.run_to_end();
    let trace = unstuck::trace::Trace::from_lines(ep.into_lines())?;
    Ok((end, trace.interventions()))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for text in ["the bag is just trash, drive over it", "wait 5 seconds then go left", "back up 3 m", "nice weather today"] {
        let i = interpret_keywords(text);
        println!("{text:?} -> {:?} {:?}", i.confidence, i.directives);
    }
    for g in [false, true] {
        let (end, interventions) = run(g)?;
        println!("plastic_bag guidance={g}: {end:?} after {interventions} interventions");
    }
    Ok(())
}
