//! Batch run configuration, read from a flat TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::MetricsConfig;
use crate::reasoning::{LatencyModel, LlmConfig};
use crate::recovery::RecoveryConfig;
use crate::trace::RecoveryMode;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceEntry {
    /// Only applies to this scenario name; all scenarios if absent.
    #[serde(default)]
    pub scenario: Option<String>,
    /// Simulated time (s).
    pub at: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Row label in reports; defaults to the recovery mode.
    pub label: Option<String>,
    /// Scenario files or directories of `.scn` files.
    pub scenarios: Vec<PathBuf>,
    pub recovery: RecoveryMode,
    pub latency: LatencyModel,
    /// Minimum time between requests without new guidance (s).
    pub cooldown: f64,
    /// Overrides every scenario's seed.
    pub seed: Option<u64>,
    pub lockstep: bool,
    pub output: Option<PathBuf>,
    pub llm: Option<LlmConfig>,
    /// Directory with `system.md` and `instructions.md`; bundled prompts otherwise.
    pub prompts: Option<PathBuf>,
    pub guidance: Vec<GuidanceEntry>,
    pub metrics: MetricsConfig,
    /// Run scenarios on worker threads.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let rc = RecoveryConfig::default();
        Self {
            label: None,
            scenarios: vec![],
            recovery: RecoveryMode::Off,
            latency: rc.latency,
            cooldown: rc.cooldown,
            seed: None,
            lockstep: true,
            output: None,
            llm: None,
            prompts: None,
            guidance: vec![],
            metrics: MetricsConfig::default(),
            parallel: true,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<RunConfig, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.scenarios.iter_mut().for_each(resolve);
        cfg.output.as_mut().map(resolve);
        cfg.prompts.as_mut().map(resolve);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.recovery == RecoveryMode::Llm && self.llm.is_none() {
            return Err(HarnessError::Config("recovery = \"llm\" needs an [llm] section".into()));
        }
        if !(self.cooldown >= 0.0) {
            return Err(HarnessError::Config("cooldown must be non-negative".into()));
        }
        for g in &self.guidance {
            if !(g.at >= 0.0) {
                return Err(HarnessError::Config(format!("guidance time {} is negative", g.at)));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.recovery.as_str().to_string())
    }

    pub fn recovery_config(&self) -> RecoveryConfig {
        RecoveryConfig { cooldown: self.cooldown, latency: self.latency, lockstep: self.lockstep, ..Default::default() }
    }

    /// Expands directories into their `.scn` files, sorted by path.
    pub fn scenario_files(&self) -> Result<Vec<PathBuf>, HarnessError> {
        let mut out = vec![];
        for p in &self.scenarios {
            if p.is_dir() {
                let mut files: Vec<PathBuf> = std::fs::read_dir(p)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|f| f.extension().is_some_and(|x| x == "scn"))
                    .collect();
                files.sort();
                out.extend(files);
            } else {
                out.push(p.clone());
            }
        }
        Ok(out)
    }
}
