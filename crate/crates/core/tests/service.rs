use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::Path;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};
use unstuck::harness::{run_suite, RunConfig};
use unstuck::service::{spawn_service, ServiceConfig, ServiceHandle};
use unstuck::trace::Trace;

fn service(max_active: usize) -> ServiceHandle {
    spawn_service(ServiceConfig { max_active, ..Default::default() }, SocketAddr::from(([127, 0, 0, 1], 0))).unwrap()
}

fn create(client: &Client, svc: &ServiceHandle, body: Value) -> reqwest::blocking::Response {
    client.post(format!("{}/runs", svc.url())).json(&body).send().unwrap()
}

fn run_id(resp: reqwest::blocking::Response) -> String {
    assert_eq!(resp.status(), StatusCode::OK);
    resp.json::<Value>().unwrap()["run_id"].as_str().unwrap().to_string()
}

fn wait_finished(client: &Client, svc: &ServiceHandle, id: &str) -> Value {
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let v: Value = client.get(format!("{}/runs/{id}", svc.url())).send().unwrap().json().unwrap();
        if v["run"]["state"] == "finished" {
            return v;
        }
        assert!(Instant::now() < deadline, "run {id} did not finish");
        std::thread::sleep(Duration::from_millis(20));
    }
}

/// Reads `(event, data)` pairs from an SSE body until `metrics_final`.
fn read_stream(resp: reqwest::blocking::Response) -> Vec<(String, Value)> {
    let mut out = vec![];
    let mut event = String::new();
    for line in BufReader::new(resp).lines() {
        let line = line.unwrap();
        if let Some(e) = line.strip_prefix("event:") {
            event = e.trim().to_string();
        } else if let Some(d) = line.strip_prefix("data:") {
            let data: Value = serde_json::from_str(d.trim()).unwrap();
            let done = event == "metrics_final";
            out.push((event.clone(), data));
            if done {
                break;
            }
        }
    }
    out
}

#[test]
fn request_errors_map_to_status_codes() {
    let svc = service(1);
    let client = Client::new();

    assert_eq!(create(&client, &svc, json!({"scenario": "no_such_scenario"})).status(), StatusCode::BAD_REQUEST);
    assert_eq!(create(&client, &svc, json!({"scenario": "../etc"})).status(), StatusCode::BAD_REQUEST);
    assert_eq!(create(&client, &svc, json!({"scenario": "red_light", "bogus": 1})).status(), StatusCode::BAD_REQUEST);
    assert_eq!(client.get(format!("{}/runs/missing", svc.url())).send().unwrap().status(), StatusCode::NOT_FOUND);
    let r = client.post(format!("{}/runs/missing/guidance", svc.url())).json(&json!({"text": "go"})).send().unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);

    // realtime pace keeps the first run active
    let id = run_id(create(&client, &svc, json!({"scenario": "free_flow_straight", "speed": 1.0})));
    assert_eq!(create(&client, &svc, json!({"scenario": "red_light"})).status(), StatusCode::CONFLICT);

    let guide = |body: Value| client.post(format!("{}/runs/{id}/guidance", svc.url())).json(&body).send().unwrap();
    assert_eq!(guide(json!({"text": "   "})).status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(guide(json!({"text": "x".repeat(501)})).status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(guide(json!({"message": "go"})).status(), StatusCode::UNPROCESSABLE_ENTITY);
    let ok = guide(json!({"text": "keep going"}));
    assert_eq!(ok.status(), StatusCode::OK);
    let body: Value = ok.json().unwrap();
    assert_eq!(body["accepted"], true);
    assert!(body["sim_time"].as_f64().unwrap() >= 0.0);

    let speed = client.post(format!("{}/runs/{id}/speed", svc.url())).json(&json!({"factor": 0.0})).send().unwrap();
    assert_eq!(speed.status(), StatusCode::OK);
    let done = wait_finished(&client, &svc, &id);
    assert_eq!(done["run"]["end"], "arrived");
    assert_eq!(guide(json!({"text": "too late"})).status(), StatusCode::GONE);
    let pause = client.post(format!("{}/runs/{id}/pause", svc.url())).send().unwrap();
    assert_eq!(pause.status(), StatusCode::GONE);

    // the finished run no longer counts against the limit
    run_id(create(&client, &svc, json!({"scenario": "red_light", "speed": 0.0})));
}

#[test]
fn stream_orders_reasoning_plan_and_final_metrics() {
    let svc = service(2);
    let client = Client::new();
    let id = run_id(create(&client, &svc, json!({"scenario": "open_door", "speed": 8.0})));
    let stream = client.get(format!("{}/runs/{id}/stream", svc.url())).timeout(Duration::from_secs(60)).send().unwrap();
    assert_eq!(stream.status(), StatusCode::OK);
    let text = "the car door ahead is open, pass it on the left";
    let r = client.post(format!("{}/runs/{id}/guidance", svc.url())).json(&json!({"text": text})).send().unwrap();
    assert_eq!(r.status(), StatusCode::OK);

    let events = read_stream(stream);
    let names: Vec<&str> = events.iter().map(|(e, _)| e.as_str()).collect();
    assert_eq!(names.first(), Some(&"frame"));
    assert_eq!(names.last(), Some(&"metrics_final"));
    let pos = |n: &str| names.iter().position(|x| *x == n).unwrap_or_else(|| panic!("no {n} event in {names:?}"));
    let (guidance, reasoning, plan) = (pos("guidance"), pos("reasoning"), pos("plan"));
    assert!(guidance < reasoning && reasoning < plan, "{names:?}");
    assert_eq!(events[reasoning].1["guidance"], text);
    assert_eq!(events[plan].1["plan"]["behavior_plan"][0], "LaneChangeLeft");

    let ticks: Vec<u64> = events.iter().filter(|(e, _)| e == "frame").map(|(_, d)| d["tick"].as_u64().unwrap()).collect();
    let bad: Vec<_> = ticks.windows(2).filter(|w| w[0] >= w[1]).collect();
    assert!(bad.is_empty(), "frame ticks go backwards: {bad:?}");
    assert_eq!(events.last().unwrap().1["scenario"], "open_door");
    assert_eq!(names.iter().filter(|n| **n == "metrics_final").count(), 1);
}

#[test]
fn late_subscriber_gets_last_frame_and_metrics() {
    let svc = service(2);
    let client = Client::new();
    let id = run_id(create(&client, &svc, json!({"scenario": "red_light", "speed": 0.0, "recovery": "off"})));
    let info = wait_finished(&client, &svc, &id);
    let events = read_stream(client.get(format!("{}/runs/{id}/stream", svc.url())).send().unwrap());
    let names: Vec<&str> = events.iter().map(|(e, _)| e.as_str()).collect();
    assert_eq!(names, ["frame", "metrics_final"]);
    assert_eq!(events[1].1, info["run"]["metrics"]);
    let runs: Value = client.get(format!("{}/runs", svc.url())).send().unwrap().json().unwrap();
    assert_eq!(runs.as_array().unwrap().len(), 1);
}

#[test]
fn service_run_matches_headless_run() {
    let out = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig { output: Some(out.path().to_path_buf()), ..Default::default() };
    let svc = spawn_service(cfg, SocketAddr::from(([127, 0, 0, 1], 0))).unwrap();
    let client = Client::new();
    let id = run_id(create(&client, &svc, json!({"scenario": "construction", "speed": 0.0})));
    let stream = client.get(format!("{}/runs/{id}/stream", svc.url())).send().unwrap();
    let events = read_stream(stream);
    wait_finished(&client, &svc, &id);

    let live = Trace::load(&out.path().join(&id).join("construction/trace.jsonl")).unwrap();
    let mut headless_cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/oracle.toml")).unwrap();
    headless_cfg.output = None;
    headless_cfg.scenarios = vec![Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/construction.scn")];
    let headless = run_suite(&headless_cfg).unwrap().runs.remove(0);

    let live_digests: Vec<&String> = live.ticks.iter().map(|t| &t.digest).collect();
    let headless_digests = headless.digests();
    assert_eq!(live_digests.len(), headless_digests.len());
    assert!(live_digests.iter().zip(&headless_digests).all(|(a, b)| *a == b));

    let plan_ids: Vec<u64> = events.iter().filter(|(e, _)| e == "plan").map(|(_, d)| d["plan_id"].as_u64().unwrap()).collect();
    let recorded: Vec<u64> = live.reasoning.iter().filter_map(|r| r.plan_id).collect();
    assert_eq!(plan_ids, recorded);
    let last = &events.last().unwrap().1;
    assert_eq!(last["ds"], serde_json::to_value(headless.metrics.ds).unwrap());
}

#[test]
fn slow_reader_gets_coalesced_frames() {
    let svc = service(2);
    let client = Client::new();
    let id = run_id(create(&client, &svc, json!({"scenario": "free_flow_straight", "speed": 0.0, "recovery": "off"})));
    let stream = client.get(format!("{}/runs/{id}/stream", svc.url())).send().unwrap();
    let mut frames = vec![];
    let mut event = String::new();
    let mut finished = false;
    for line in BufReader::with_capacity(256, stream).lines() {
        let line = line.unwrap();
        if let Some(e) = line.strip_prefix("event:") {
            event = e.trim().to_string();
        } else if let Some(d) = line.strip_prefix("data:") {
            let data: Value = serde_json::from_str(d.trim()).unwrap();
            if event == "frame" {
                frames.push(data["tick"].as_u64().unwrap());
                std::thread::sleep(Duration::from_millis(5));
            } else if event == "metrics_final" {
                finished = true;
                break;
            }
        }
    }
    assert!(finished);
    let info = wait_finished(&client, &svc, &id);
    let ticks = info["run"]["tick"].as_u64().unwrap();
    assert!(frames.windows(2).all(|w| w[0] < w[1]));
    assert!((frames.len() as u64) < ticks, "{} frames for {ticks} ticks", frames.len());
}
