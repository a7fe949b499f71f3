//! Loads a bundled scenario and prints its map, actors and planned route.
//!
//! `cargo run --example scenario -- construction`

use std::path::Path;

use unstuck::harness::load_scenario_file;
use unstuck::world::ActorKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "construction".into());
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.scn"));
    let sc = load_scenario_file(&path)?;
    println!("{} ({})", sc.name(), sc.category().as_str());
    for lane in sc.world.graph.lanes() {
        println!("  lane {:<3} length {:>6.1} m  left={:?} right={:?}", lane.id, lane.length(), lane.left, lane.right);
    }
    for a in sc.world.actors.iter().filter(|a| a.kind != ActorKind::Ego) {
        println!("  {:<8} {:?} at ({:.1}, {:.1}) speed {:.1}", a.id, a.kind, a.pose.x, a.pose.y, a.speed);
    }
    let route = unstuck::av::plan_route(&sc.world.graph, &sc.route.start, &sc.route.destination, &Default::default())?;
    let lanes: Vec<_> = route.lanes().cloned().collect();
    println!("route {:.1} m through {}", route.length(), lanes.join(" -> "));
    Ok(())
}
