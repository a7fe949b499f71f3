//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use unstuck::av::{plan_route, AvConfig, AvStack, Behavior, IdmParams, Perceiver, PerceptionConfig};
use unstuck::harness::{replay, run_suite, Episode, EpisodeSettings, ReplaySource, RunConfig, RunResult, SuiteOutcome};
use unstuck::metrics::{score_run, InfractionEvent, InfractionKind, MetricsConfig};
use unstuck::reasoning::stub::{spawn_stub, StubHandle, StubMode};
use unstuck::reasoning::{LlmBackend, LlmConfig, MapDigest, WireAnswer};
use unstuck::recovery::{is_immobilized, AnalysisResult, Cause, DetectorConfig, RecoveryPlan, Responder, TraceRecord};
use unstuck::trace::{EndReason, RecoveryMode, Trace};
use unstuck::world::{load_scenario, ActorKind, ControlCommand, Scenario, DT};

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn config(name: &str) -> RunConfig {
    let mut cfg = RunConfig::load(&manifest().join("configs").join(format!("{name}.toml"))).unwrap();
    cfg.output = None;
    cfg
}

fn scenario(name: &str) -> Scenario {
    unstuck::harness::load_scenario_file(&manifest().join("scenarios").join(format!("{name}.scn"))).unwrap()
}

fn run<'a>(outcome: &'a SuiteOutcome, name: &str) -> &'a RunResult {
    outcome.runs.iter().find(|r| r.metrics.scenario == name).unwrap_or_else(|| panic!("no run {name}"))
}

fn records(run: &RunResult) -> Vec<TraceRecord> {
    run.trace().reasoning
}

fn commands(run: &RunResult) -> Vec<(u64, u64, u64, bool)> {
    run.trace()
        .ticks
        .iter()
        .map(|t| (t.steer.to_bits(), t.throttle.to_bits(), t.brake.to_bits(), t.reverse))
        .collect()
}

fn successes(o: &SuiteOutcome) -> usize {
    o.runs.iter().filter(|r| r.metrics.success).count()
}

fn mean_ds(o: &SuiteOutcome) -> f64 {
    o.runs.iter().map(|r| r.metrics.ds).sum::<f64>() / o.runs.len() as f64
}

const BLOCKAGES: [&str; 5] = ["construction", "parked_obstacle", "open_door", "traversable_debris", "plastic_bag"];

struct Suites {
    baseline: SuiteOutcome,
    oracle: SuiteOutcome,
    guided: SuiteOutcome,
    elapsed: f64,
}

fn trend(s: &Suites) -> Check {
    for o in [&s.baseline, &s.oracle, &s.guided] {
        ensure(o.runs.len() == 12 && o.failures.is_empty(), || format!("{} ran {} scenarios, failures {:?}", o.report.label, o.runs.len(), o.failures))?;
    }
    for name in BLOCKAGES {
        ensure(!run(&s.baseline, name).metrics.success, || format!("baseline succeeded on blockage {name}"))?;
    }
    let (b, o, g) = (successes(&s.baseline), successes(&s.oracle), successes(&s.guided));
    ensure(o >= b + 4, || format!("recovery successes {o} vs baseline {b}"))?;
    let (db, dor) = (mean_ds(&s.baseline), mean_ds(&s.oracle));
    ensure(dor > db, || format!("mean DS {dor} not above baseline {db}"))?;
    ensure(g >= o, || format!("guided successes {g} below recovery {o}"))?;
    let sr = |o: &SuiteOutcome| o.report.categories.get("traversable_debris").map(|r| r.sr).unwrap_or(0.0);
    ensure(sr(&s.guided) > sr(&s.oracle), || format!("traversable_debris SR {} vs {}", sr(&s.guided), sr(&s.oracle)))?;
    ensure(s.elapsed < 120.0, || format!("suites took {:.1} s", s.elapsed))?;
    println!("    SR baseline {b}/12, recovery {o}/12, guided {g}/12; DS {db:.4} -> {dor:.4}; {:.2} s", s.elapsed);
    Ok(())
}

fn qualitative(s: &Suites) -> Check {
    let door = records(run(&s.oracle, "open_door"));
    let first = door.iter().find_map(|r| r.output.as_ref()).ok_or("open_door produced no plan")?;
    ensure(first.behavior_plan.first() == Some(&Behavior::LaneChangeLeft), || format!("open_door plan {:?}", first.behavior_plan))?;
    let ped = run(&s.oracle, "pedestrian_crossing");
    ensure(records(ped).iter().all(|r| r.output.is_none()), || "pedestrian_crossing produced a plan".into())?;
    ensure(ped.metrics.interventions == 0, || format!("pedestrian_crossing interventions {}", ped.metrics.interventions))?;
    ensure(ped.trace().ticks.iter().all(|t| t.source == "baseline"), || "pedestrian_crossing ran an override".into())
}

fn replanning(s: &Suites) -> Check {
    for name in ["construction", "parked_obstacle"] {
        let r = run(&s.oracle, name);
        let rec = records(r).into_iter().find(|r| r.plan_id.is_some()).ok_or_else(|| format!("{name}: no applied plan"))?;
        let plan = rec.output.as_ref().unwrap();
        ensure(plan.route_replanning, || format!("{name}: route_replanning false"))?;
        let digest = MapDigest::parse(&rec.map_digest);
        let start = plan.route_start_point.as_ref().ok_or_else(|| format!("{name}: no start point"))?;
        let neighbors: Vec<&String> = [&digest.left, &digest.right].into_iter().flatten().map(|(l, _)| l).collect();
        ensure(start.lane != digest.ego_lane && neighbors.contains(&&start.lane), || {
            format!("{name}: start lane {} not adjacent to {} ({:?})", start.lane, digest.ego_lane, neighbors)
        })?;
        ensure(r.metrics.rc == 1.0, || format!("{name}: rc {}", r.metrics.rc))?;
    }
    Ok(())
}

/// Gate oracle: the trailing run of samples below `v_min` lasts at least the hold time.
fn held(speeds: &[f64], v_min: f64) -> bool {
    let run = speeds.iter().rev().take_while(|v| v.abs() < v_min).count();
    run as f64 * DT >= 1.0 - 1e-9
}

fn detector_world() -> Scenario {
    load_scenario(
        r#"{
        "meta": {"name": "detector", "category": "free_flow"},
        "map": {"lanes": [{"id": "A", "centerline": [[0,0],[400,0]]}]},
        "actors": [{"id": "ego", "kind": "ego", "lane": "A", "s": 10.0}],
        "route": {"start": {"lane": "A", "s": 10}, "destination": {"lane": "A", "s": 390}}
    }"#,
    )
    .unwrap()
}

/// Feeds speed samples through a real perceiver and returns the gate per tick.
fn gate_sequence(sc: &Scenario, samples: &[(f64, bool)]) -> Vec<bool> {
    let route = plan_route(&sc.world.graph, &sc.route.start, &sc.route.destination, &BTreeSet::new()).unwrap();
    let mut perceiver = Perceiver::new(PerceptionConfig::default());
    let mut world = sc.world.clone();
    let cfg = DetectorConfig::default();
    samples
        .iter()
        .map(|&(v, dest)| {
            world.actors.iter_mut().find(|a| a.kind == ActorKind::Ego).unwrap().speed = v;
            let mut p = perceiver.perceive(&world, &route);
            p.ego.destination_flag = dest;
            let fired = is_immobilized(&p.ego, &cfg);
            world = world.step(&ControlCommand::IDLE);
            fired
        })
        .collect()
}

fn detector() -> Check {
    let sc = detector_world();
    let v_min = DetectorConfig::default().v_min;
    let sample = (prop_oneof![Just(0.0), Just(1.25), Just(1.2499), Just(1.2500001), 0.0..3.0f64], proptest::bool::weighted(0.05));
    let mut runner = TestRunner::new(PropConfig { cases: 10_000, failure_persistence: None, ..PropConfig::default() });
    runner
        .run(&proptest::collection::vec(sample, 1..80), |trace| {
            let got = gate_sequence(&sc, &trace);
            for i in 0..trace.len() {
                let speeds: Vec<f64> = trace[..=i].iter().map(|s| s.0).collect();
                let expected = !trace[i].1 && held(&speeds, v_min);
                prop_assert_eq!(got[i], expected, "tick {}", i);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    // exactly 1.0 s below the threshold fires on the 20th sample, not before
    let at = |v: f64, n: usize| gate_sequence(&sc, &vec![(v, false); n]);
    let just_below = at(1.2499, 20);
    ensure(just_below[..19].iter().all(|f| !f) && just_below[19], || format!("hold boundary {just_below:?}"))?;
    ensure(at(1.25, 60).iter().all(|f| !f), || "speed exactly v_min fired".into())?;
    ensure(at(0.0, 40)[19..].iter().all(|f| *f), || "gate dropped while held".into())?;
    let mut dest = vec![(0.0, false); 30];
    dest[25].1 = true;
    ensure(!gate_sequence(&sc, &dest)[25], || "fired at destination".into())
}

fn free_flow(cfg: &mut RunConfig) {
    let dir = manifest().join("scenarios");
    cfg.scenarios = ["free_flow_straight", "free_flow_curve", "free_flow_traffic"].iter().map(|n| dir.join(format!("{n}.scn"))).collect();
}

fn non_intrusive() -> Check {
    let stub = spawn_stub(StubMode::Oracle, SocketAddr::from(([127, 0, 0, 1], 0))).map_err(|e| e.to_string())?;
    let mut off = config("baseline");
    let mut oracle = config("oracle");
    let mut llm = config("llm_stub");
    llm.llm.as_mut().unwrap().endpoint = stub.endpoint();
    for c in [&mut off, &mut oracle, &mut llm] {
        free_flow(c);
    }
    let outs: Vec<SuiteOutcome> = [&off, &oracle, &llm].iter().map(|c| run_suite(c).unwrap()).collect();
    for name in ["free_flow_straight", "free_flow_curve", "free_flow_traffic"] {
        let reference = commands(run(&outs[0], name));
        ensure(!reference.is_empty(), || format!("{name}: no ticks"))?;
        for o in &outs[1..] {
            ensure(commands(run(o, name)) == reference, || format!("{name}: {} commands differ from baseline", o.report.label))?;
        }
    }
    ensure(stub.calls() == 0, || format!("stub was called {} times", stub.calls()))
}

fn metric_identities() -> Check {
    let base = config("baseline");
    let mut one = base.clone();
    one.scenarios = vec![manifest().join("scenarios/free_flow_straight.scn")];
    let template = run_suite(&one).unwrap().runs.remove(0).trace();
    let table = MetricsConfig::default().penalties;
    let kinds = [
        InfractionKind::CollisionPedestrian,
        InfractionKind::CollisionVehicle,
        InfractionKind::CollisionStatic,
        InfractionKind::RedLight,
        InfractionKind::RouteDeviation,
        InfractionKind::Timeout,
    ];
    let n_ticks = template.ticks.len();
    let strategy = (
        proptest::collection::vec((0..kinds.len(), 0..n_ticks), 0..12),
        proptest::collection::vec(0.0..1.0f64, n_ticks),
        any::<bool>(),
        any::<u64>(),
    );
    let mut runner = TestRunner::new(PropConfig { cases: 1_000, failure_persistence: None, ..PropConfig::default() });
    runner
        .run(&strategy, |(events, remaining, arrived, shuffle_seed)| {
            let mut trace: Trace = template.clone();
            let length = trace.header.route_length;
            for (t, r) in trace.ticks.iter_mut().zip(&remaining) {
                t.route_remaining = r * length;
                t.infractions.clear();
            }
            for &(k, at) in &events {
                let kind = kinds[k];
                trace.ticks[at].infractions.push(InfractionEvent { tick: at as u64, kind, penalty: table.penalty(kind), other: None });
            }
            let footer = trace.footer.as_mut().unwrap();
            footer.end = if arrived { EndReason::Arrived } else { EndReason::Timeout };
            let m = score_run(&trace, &MetricsConfig::default()).unwrap();

            // brute force, in event order
            let mut is_ = 1.0;
            for t in &trace.ticks {
                for i in &t.infractions {
                    is_ *= i.penalty;
                }
            }
            let mut rc: f64 = 0.0;
            for r in &remaining {
                rc = rc.max(1.0 - r);
            }
            if arrived {
                rc = 1.0;
            }
            prop_assert!((m.is_ - is_).abs() <= 1e-9, "is {} vs {}", m.is_, is_);
            prop_assert!((m.rc - rc).abs() <= 1e-9, "rc {} vs {}", m.rc, rc);
            prop_assert!((m.ds - rc * is_).abs() <= 1e-9, "ds {} vs {}", m.ds, rc * is_);
            prop_assert_eq!(m.ds, m.rc * m.is_);

            // same infractions, different order
            let mut flat: Vec<InfractionEvent> = trace.ticks.iter_mut().flat_map(|t| t.infractions.drain(..)).collect();
            let mut state = shuffle_seed | 1;
            for i in (1..flat.len()).rev() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                flat.swap(i, (state % (i as u64 + 1)) as usize);
            }
            for (i, ev) in flat.into_iter().enumerate() {
                trace.ticks[i].infractions.push(ev);
            }
            let shuffled = score_run(&trace, &MetricsConfig::default()).unwrap();
            prop_assert_eq!(shuffled.is_.to_bits(), m.is_.to_bits());
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn latency(s: &Suites) -> Check {
    let mut applied = 0;
    for r in &s.oracle.runs {
        for rec in records(r).iter().filter(|rec| rec.plan_id.is_some()) {
            let delivered = rec.delivered_tick.ok_or("applied record without delivery tick")?;
            ensure(delivered == rec.request_tick + 56, || format!("{}: request {} delivered {}", r.metrics.scenario, rec.request_tick, delivered))?;
            applied += 1;
        }
    }
    ensure(applied > 0, || "no plan was applied".into())?;

    // the tick the plan is installed on the vehicle, as seen from the run loop
    let cfg = config("oracle");
    let sc = scenario("open_door");
    let settings = unstuck::harness::episode_settings(&cfg, &sc, Arc::new(Default::default()));
    let backend = unstuck::harness::make_backend(&cfg).unwrap().unwrap();
    let mut ep = Episode::new(&sc, settings, Some(Responder::Live(backend)), vec![]).unwrap();
    let mut requested = None;
    loop {
        let step = ep.step();
        if step.requested {
            requested = Some(step.tick.tick);
        }
        if step.installed.is_some() {
            let req = requested.ok_or("plan installed without a request")?;
            return ensure(step.tick.tick == req + 56 && step.tick.source == "override", || {
                format!("requested {req}, installed {} ({})", step.tick.tick, step.tick.source)
            });
        }
        ensure(step.end.is_none(), || "open_door ended without a plan".into())?;
    }
}

#[derive(Clone, Copy)]
struct Car {
    x: f64,
    v: f64,
}

fn leader_speed(t: f64) -> f64 {
    if t < 10.0 {
        8.0
    } else if t < 12.0 {
        8.0 - 4.0 * (t - 10.0)
    } else if t < 25.0 {
        0.0
    } else {
        (1.5 * (t - 25.0)).min(8.0)
    }
}

fn control() -> Check {
    let idm = IdmParams::default();
    let length = 4.6;
    let n = 10;
    let mut cars: Vec<Car> = (0..n).map(|i| Car { x: -(i as f64) * 25.0, v: 8.0 }).collect();
    let mut min_gap = f64::INFINITY;
    for k in 0..(60.0 / DT).round() as usize {
        let t = k as f64 * DT;
        let prev = cars.clone();
        cars[0].x += 0.5 * (leader_speed(t) + leader_speed(t + DT)) * DT;
        cars[0].v = leader_speed(t + DT);
        for i in 1..n {
            let (me, lead) = (prev[i], prev[i - 1]);
            let a = idm.accel(me.v, 8.33, Some(lead.x - me.x - length), me.v - lead.v);
            let v1 = me.v + a * DT;
            if v1 < 0.0 {
                cars[i].x = me.x - 0.5 * me.v * me.v / a;
                cars[i].v = 0.0;
            } else {
                cars[i].x = me.x + 0.5 * (me.v + v1) * DT;
                cars[i].v = v1;
            }
        }
        for i in 1..n {
            min_gap = min_gap.min(cars[i - 1].x - cars[i].x - length);
        }
    }
    ensure(min_gap > 0.0, || format!("platoon min gap {min_gap}"))?;

    for v0 in [5.0, 8.33, 13.9] {
        let a = idm.accel(v0, v0, None, 0.0);
        ensure(a.abs() < 1e-6, || format!("free-flow equilibrium at {v0}: {a}"))?;
    }
    let a = idm.accel(0.0, 8.33, Some(idm.min_gap), 0.0);
    ensure(a.abs() < 1e-6, || format!("standstill equilibrium: {a}"))?;

    let sc = load_scenario(
        r#"{
        "meta": {"name": "pid", "category": "free_flow"},
        "map": {"lanes": [{"id": "R", "centerline": [[0,0],[400,0]]}]},
        "actors": [{"id": "ego", "kind": "ego", "lane": "R", "s": 20.0, "d": 0.5, "speed": 8.33}],
        "route": {"start": {"lane": "R", "s": 20.0}, "destination": {"lane": "R", "s": 380.0}}
    }"#,
    )
    .unwrap();
    let mut world = sc.world.clone();
    let mut stack = AvStack::new(&world, &sc.route.start, &sc.route.destination, AvConfig::default()).unwrap();
    let mut offsets = vec![];
    for _ in 0..200 {
        let (p, out) = stack.step(&world);
        offsets.push(p.ego.d);
        world = world.step(&out.command);
    }
    let settle = (4.0 / DT) as usize;
    ensure(offsets[settle..].iter().all(|d| d.abs() < 0.05), || format!("offset after 4 s: {:?}", &offsets[settle..settle + 5]))
}

fn write_all(dir: &Path, s: &Suites) {
    for o in [&s.baseline, &s.oracle, &s.guided] {
        unstuck::harness::write_outputs(&dir.join(&o.report.label), &o.runs, &o.report).unwrap();
    }
}

fn files(dir: &Path, name: &str) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|f| f == name) {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(first: &Suites) -> Check {
    let second = run_suites();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_all(a.path(), first);
    write_all(b.path(), &second);
    let (ma, mb) = (files(a.path(), "metrics.json"), files(b.path(), "metrics.json"));
    ensure(ma.len() == 36, || format!("{} metrics files", ma.len()))?;
    ensure(ma == mb, || "metrics.json differs between executions".into())?;
    for (x, y) in [(&first.baseline, &second.baseline), (&first.oracle, &second.oracle), (&first.guided, &second.guided)] {
        for (r1, r2) in x.runs.iter().zip(&y.runs) {
            ensure(r1.digests() == r2.digests(), || format!("{} digests differ", r1.metrics.scenario))?;
        }
    }
    for (path, _) in files(a.path(), "trace.jsonl") {
        let trace = Trace::load(&a.path().join(&path)).map_err(|e| e.to_string())?;
        let report = replay(&trace, ReplaySource::Recorded).map_err(|e| e.to_string())?;
        ensure(report.is_clean(), || format!("{}: {report:?}", path.display()))?;
    }
    Ok(())
}

fn first_record(stub: &StubHandle, timeout_secs: f64) -> TraceRecord {
    let backend = LlmBackend::new(LlmConfig { endpoint: stub.endpoint(), timeout_secs, ..LlmConfig::default() }).unwrap();
    let mut ep = Episode::new(&scenario("open_door"), EpisodeSettings::new("wire", RecoveryMode::Llm), Some(Responder::Live(Arc::new(backend))), vec![]).unwrap();
    loop {
        let step = ep.step();
        if let Some(r) = step.reasoning {
            return r;
        }
        assert!(step.end.is_none(), "run ended without reasoning");
    }
}

fn wire_contract() -> Check {
    let answer = serde_json::to_value(WireAnswer {
        analysis: AnalysisResult::stuck(Cause::BlockedEgoLane),
        output: Some(RecoveryPlan {
            behavior_plan: vec![Behavior::LaneChangeLeft, Behavior::LaneKeep],
            reason: "door open in ego lane".into(),
            route_replanning: false,
            route_start_point: None,
        }),
    })
    .unwrap();
    let local = SocketAddr::from(([127, 0, 0, 1], 0));

    let stub = spawn_stub(StubMode::Fixed(answer.clone()), local).map_err(|e| e.to_string())?;
    let rec = first_record(&stub, 10.0);
    ensure(rec.output.as_ref().map(|p| p.behavior_plan[0]) == Some(Behavior::LaneChangeLeft), || format!("valid answer: {:?}", rec.output))?;
    ensure(rec.retry_count == 0 && rec.error.is_none() && stub.calls() == 1, || format!("valid answer record {rec:?}"))?;

    let stub = spawn_stub(StubMode::MalformedThenValid(answer.clone()), local).map_err(|e| e.to_string())?;
    let rec = first_record(&stub, 10.0);
    ensure(rec.output.is_some() && rec.retry_count == 1 && stub.calls() == 2, || format!("retry record {rec:?}, calls {}", stub.calls()))?;
    ensure(rec.raw.len() == 2, || format!("raw attempts {:?}", rec.raw))?;

    let stub = spawn_stub(StubMode::Sleep { seconds: 2.0, answer }, local).map_err(|e| e.to_string())?;
    let rec = first_record(&stub, 0.3);
    ensure(rec.output.is_none(), || "timeout produced a plan".into())?;
    ensure(rec.error.as_deref().is_some_and(|e| e.starts_with("backend unavailable")), || format!("timeout error {:?}", rec.error))
}

fn run_suites() -> Suites {
    let started = Instant::now();
    let baseline = run_suite(&config("baseline")).unwrap();
    let oracle = run_suite(&config("oracle")).unwrap();
    let guided = run_suite(&config("guided")).unwrap();
    Suites { baseline, oracle, guided, elapsed: started.elapsed().as_secs_f64() }
}

#[test]
fn acceptance() {
    println!();
    let suites = run_suites();
    let checks: Vec<(&str, Box<dyn Fn() -> Check + '_>)> = vec![
        ("trend reproduction", Box::new(|| trend(&suites))),
        ("qualitative cases", Box::new(|| qualitative(&suites))),
        ("route replanning", Box::new(|| replanning(&suites))),
        ("detector thresholds", Box::new(detector)),
        ("non-intrusiveness", Box::new(non_intrusive)),
        ("metric identities", Box::new(metric_identities)),
        ("latency model", Box::new(|| latency(&suites))),
        ("control properties", Box::new(control)),
        ("determinism", Box::new(|| determinism(&suites))),
        ("llm wire contract", Box::new(wire_contract)),
    ];
    let mut failed = vec![];
    for (name, check) in &checks {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(()) => println!("PASS {name} ({secs:.2} s)"),
            Err(e) => {
                println!("FAIL {name} ({secs:.2} s): {e}");
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
