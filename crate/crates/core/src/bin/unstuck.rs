use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use unstuck::harness::{replay, run_suite, ReplaySource, RunConfig};
use unstuck::metrics::MetricsConfig;
use unstuck::reasoning::stub::{spawn_stub, StubMode};
use unstuck::reasoning::{LlmConfig, RuleOracle};
use unstuck::service::{serve, ServiceConfig, DEFAULT_PORT};
use unstuck::trace::{RecoveryMode, Trace};

#[derive(Parser)]
#[command(name = "unstuck", version, about = "Closed-loop driving runs with an immobilization recovery layer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario suite and write traces and reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        recovery: Option<RecoveryMode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Block the sim on each reasoning call (deterministic).
        #[arg(long, conflicts_with = "free_running")]
        lockstep: bool,
        /// Let the sim keep stepping while reasoning runs.
        #[arg(long)]
        free_running: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-execute a trace and verify state digests.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        /// Recompute reasoning with the rule oracle instead of using recorded answers.
        #[arg(long)]
        recompute: bool,
    },
    /// Score a trace file.
    Score {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Send passenger guidance to a live run.
    Guide {
        #[arg(long)]
        run: String,
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = format!("http://127.0.0.1:{DEFAULT_PORT}"))]
        url: String,
    },
    /// Serve live runs over HTTP.
    Serve {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        max_active: usize,
        /// Chat-completion endpoint for recovery = llm runs.
        #[arg(long)]
        llm_endpoint: Option<String>,
    },
    /// Serve a local stand-in chat-completion endpoint backed by the rule oracle.
    Stub {
        #[arg(long, default_value_t = 8089)]
        port: u16,
    },
}

fn run(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { config, recovery, seed, lockstep, free_running, output } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(r) = recovery {
                cfg.recovery = r;
                cfg.label = None;
            }
            cfg.seed = seed.or(cfg.seed);
            if lockstep {
                cfg.lockstep = true;
            }
            if free_running {
                cfg.lockstep = false;
            }
            if output.is_some() {
                cfg.output = output;
            }
            let outcome = run_suite(&cfg)?;
            print!("{}", outcome.report.table());
            for (path, err) in &outcome.failures {
                eprintln!("failed: {}: {err}", path.display());
            }
            if let Some(out) = &cfg.output {
                println!("wrote {}", out.display());
            }
            Ok(outcome.failures.is_empty())
        }
        Command::Replay { trace, recompute } => {
            let t = Trace::load(&trace)?;
            let source = if recompute { ReplaySource::Recompute(Arc::new(RuleOracle::default())) } else { ReplaySource::Recorded };
            let report = replay(&t, source)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.is_clean())
        }
        Command::Score { trace } => {
            let m = unstuck::harness::score_trace_file(&trace, &MetricsConfig::default())?;
            println!("{}", serde_json::to_string_pretty(&m)?);
            Ok(true)
        }
        Command::Guide { run, text, url } => {
            let resp = reqwest::blocking::Client::new()
                .post(format!("{}/runs/{run}/guidance", url.trim_end_matches('/')))
                .json(&serde_json::json!({ "text": text }))
                .send()?;
            let status = resp.status();
            println!("{}", resp.text()?);
            Ok(status.is_success())
        }
        Command::Serve { port, scenarios, output, max_active, llm_endpoint } => {
            let mut cfg = ServiceConfig { output, max_active, ..Default::default() };
            if let Some(dir) = scenarios {
                cfg.scenario_dir = dir;
            }
            cfg.llm = llm_endpoint.map(|endpoint| LlmConfig { endpoint, ..Default::default() });
            serve(cfg, SocketAddr::from(([127, 0, 0, 1], port)))?;
            Ok(true)
        }
        Command::Stub { port } => {
            let stub = spawn_stub(StubMode::Oracle, SocketAddr::from(([127, 0, 0, 1], port)))?;
            println!("stub listening on {}", stub.endpoint());
            loop {
                std::thread::park();
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
