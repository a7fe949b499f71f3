//! Batch execution of scenario suites, per-run traces and reports, replay.

pub mod config;
pub mod episode;
pub mod replay;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::av::RouteError;
use crate::guidance::GuidanceSource;
use crate::metrics::{aggregate, score_run, MetricsError, RunMetrics, SuiteReport};
use crate::reasoning::{LlmBackend, Prompts, ReasoningBackend, RuleOracle};
use crate::recovery::Responder;
use crate::trace::{write_lines, RecoveryMode, Trace, TraceError, TraceLine};
use crate::world::{load_scenario, Scenario, ScenarioError};

pub use config::{GuidanceEntry, RunConfig};
pub use episode::{Episode, EpisodeSettings, StepReport, TimedGuidance};
pub use replay::{replay, Divergence, ReplayReport, ReplaySource};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: {error}")]
    Scenario { path: PathBuf, error: ScenarioError },
    #[error("route: {0}")]
    Route(#[from] RouteError),
    #[error("backend: {0}")]
    Backend(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("trace version {found} does not match this build ({expected})")]
    Version { expected: String, found: String },
}

pub fn load_scenario_file(path: &Path) -> Result<Scenario, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    load_scenario(&text).map_err(|error| HarnessError::Scenario { path: path.to_path_buf(), error })
}

/// Builds the shared backend for a recovery mode; `None` when recovery is off.
pub fn make_backend(cfg: &RunConfig) -> Result<Option<Arc<dyn ReasoningBackend>>, HarnessError> {
    Ok(match cfg.recovery {
        RecoveryMode::Off => None,
        RecoveryMode::Oracle => Some(Arc::new(RuleOracle::default())),
        RecoveryMode::Llm => {
            let llm = cfg.llm.clone().ok_or_else(|| HarnessError::Config("missing [llm] section".into()))?;
            Some(Arc::new(LlmBackend::new(llm).map_err(|e| HarnessError::Backend(e.to_string()))?))
        }
    })
}

/// A finished run: its full trace and score.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub lines: Vec<TraceLine>,
    pub metrics: RunMetrics,
}

impl RunResult {
    pub fn trace(&self) -> Trace {
        Trace::from_lines(self.lines.clone()).expect("episode traces start with a header")
    }

    pub fn digests(&self) -> Vec<String> {
        self.lines
            .iter()
            .filter_map(|l| match l {
                TraceLine::Tick(t) => Some(t.digest.clone()),
                _ => None,
            })
            .collect()
    }
}

pub fn episode_settings(cfg: &RunConfig, scenario: &Scenario, prompts: Arc<Prompts>) -> EpisodeSettings {
    let seed = cfg.seed.unwrap_or(scenario.world.seed);
    EpisodeSettings {
        run_id: format!("{}-{}-{seed}", scenario.name(), cfg.label()),
        recovery: cfg.recovery,
        recovery_config: cfg.recovery_config(),
        av_config: Default::default(),
        seed: Some(seed),
        prompts,
        penalties: cfg.metrics.penalties,
    }
}

pub fn guidance_script(cfg: &RunConfig, scenario: &str) -> Vec<TimedGuidance> {
    cfg.guidance
        .iter()
        .filter(|g| g.scenario.as_deref().is_none_or(|s| s == scenario))
        .map(|g| TimedGuidance { at: g.at, text: g.text.clone(), source: GuidanceSource::Script })
        .collect()
}

pub fn load_prompts(cfg: &RunConfig) -> Result<Arc<Prompts>, HarnessError> {
    Ok(Arc::new(match &cfg.prompts {
        Some(dir) => Prompts::load(dir).map_err(|e| HarnessError::Config(format!("prompts {}: {e}", dir.display())))?,
        None => Prompts::default(),
    }))
}

/// Runs one scenario headless to arrival or timeout.
pub fn run_scenario(
    scenario: &Scenario,
    cfg: &RunConfig,
    backend: Option<Arc<dyn ReasoningBackend>>,
    prompts: Arc<Prompts>,
) -> Result<RunResult, HarnessError> {
    let started = Instant::now();
    let settings = episode_settings(cfg, scenario, prompts);
    let mut ep = Episode::new(scenario, settings, backend.map(Responder::Live), guidance_script(cfg, scenario.name()))?;
    ep.run_to_end();
    let lines = ep.into_lines();
    let mut metrics = score_run(&Trace::from_lines(lines.clone())?, &cfg.metrics)?;
    metrics.wall_duration = Some(started.elapsed().as_secs_f64());
    Ok(RunResult { lines, metrics })
}

#[derive(Debug)]
pub struct SuiteOutcome {
    pub report: SuiteReport,
    /// Runs by scenario name, in name order.
    pub runs: Vec<RunResult>,
    /// Scenario files that failed to load or run.
    pub failures: Vec<(PathBuf, String)>,
}

/// Runs every scenario in the config, writes traces and reports if an
/// output directory is set. Per-scenario failures are collected, not fatal.
pub fn run_suite(cfg: &RunConfig) -> Result<SuiteOutcome, HarnessError> {
    cfg.validate()?;
    let backend = make_backend(cfg)?;
    let prompts = load_prompts(cfg)?;
    let files = cfg.scenario_files()?;
    let run_file = |path: &PathBuf| -> Result<RunResult, HarnessError> {
        let scenario = load_scenario_file(path)?;
        run_scenario(&scenario, cfg, backend.clone(), prompts.clone())
    };
    let results: Vec<(PathBuf, Result<RunResult, HarnessError>)> = if cfg.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = files.iter().map(|f| (f, s.spawn(|| run_file(f)))).collect();
            handles
                .into_iter()
                .map(|(f, h)| {
                    let r = h.join().unwrap_or_else(|_| Err(HarnessError::Config("run panicked".into())));
                    (f.clone(), r)
                })
                .collect()
        })
    } else {
        files.iter().map(|f| (f.clone(), run_file(f))).collect()
    };

    let mut runs = vec![];
    let mut failures = vec![];
    for (path, r) in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => {
                log::error!("{}: {e}", path.display());
                failures.push((path, e.to_string()));
            }
        }
    }
    runs.sort_by(|a, b| a.metrics.scenario.cmp(&b.metrics.scenario));
    if runs.is_empty() {
        return Err(HarnessError::Config(format!("no scenario ran ({} failed to load)", failures.len())));
    }
    let metrics: Vec<RunMetrics> = runs.iter().map(|r| r.metrics.clone()).collect();
    let report = aggregate(&cfg.label(), &metrics)?;
    if let Some(out) = &cfg.output {
        write_outputs(out, &runs, &report)?;
    }
    Ok(SuiteOutcome { report, runs, failures })
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn write_outputs(dir: &Path, runs: &[RunResult], report: &SuiteReport) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    for run in runs {
        let d = dir.join(&run.metrics.scenario);
        std::fs::create_dir_all(&d)?;
        write_lines(&d.join("trace.jsonl"), &run.lines)?;
        std::fs::write(d.join("metrics.json"), to_json(&run.metrics))?;
    }
    std::fs::write(dir.join("report.json"), to_json(report))?;
    std::fs::write(dir.join("report.txt"), report.table())?;
    Ok(())
}

/// Scores a trace file from disk.
pub fn score_trace_file(path: &Path, cfg: &crate::metrics::MetricsConfig) -> Result<RunMetrics, HarnessError> {
    Ok(score_run(&Trace::load(path)?, cfg)?)
}
