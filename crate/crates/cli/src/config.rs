//! Run configuration file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use verimap_core::coordinator::{DEFAULT_MAX_ITERATIONS, DEFAULT_MAX_RETRIES};
use verimap_core::executor::{ExecutorConfig, DEFAULT_ROUND_CAP};
use verimap_core::gateway::HttpConfig;
use verimap_core::verifier::{VerifierConfig, DEFAULT_JUDGE_ROUND_CAP, DEFAULT_VF_TIMEOUT_S};
use verimap_core::CoordinatorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Scripted,
}

/// Either the in-process evaluator or a harness command line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HarnessSetting {
    Named(String),
    Command(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub planner_model: String,
    pub executor_model: String,
    pub verifier_model: String,
    pub backend: BackendKind,
    pub script: Option<PathBuf>,
    pub max_retries: usize,
    pub max_iterations: usize,
    pub executor_round_cap: usize,
    pub judge_round_cap: usize,
    pub vf_timeout_s: u64,
    pub prices: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub trace_out: Option<PathBuf>,
    pub harness: HarnessSetting,
    pub tools: Vec<String>,
    pub demo_example: Option<String>,
    pub base_url: Option<String>,
    pub api_key: Option<String>,
    pub request_timeout_s: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            planner_model: "gpt-4.1".into(),
            executor_model: "gpt-4o-mini".into(),
            verifier_model: "gpt-4o-mini".into(),
            backend: BackendKind::Http,
            script: None,
            max_retries: DEFAULT_MAX_RETRIES,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            executor_round_cap: DEFAULT_ROUND_CAP,
            judge_round_cap: DEFAULT_JUDGE_ROUND_CAP,
            vf_timeout_s: DEFAULT_VF_TIMEOUT_S,
            prices: None,
            corpus: None,
            trace_out: None,
            harness: HarnessSetting::Named("builtin".into()),
            tools: vec!["calculator".into(), "run_code".into()],
            demo_example: None,
            base_url: None,
            api_key: None,
            request_timeout_s: 120,
        }
    }
}

impl RunConfig {
    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.script, &mut cfg.prices, &mut cfg.corpus, &mut cfg.trace_out] {
            if let Some(rel) = p.as_ref().filter(|p| p.is_relative()) {
                *p = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.backend == BackendKind::Scripted && self.script.is_none() {
            bail!("the scripted backend requires a script file (--script)");
        }
        for (name, value) in [
            ("max_retries", self.max_retries),
            ("max_iterations", self.max_iterations),
            ("executor_round_cap", self.executor_round_cap),
            ("judge_round_cap", self.judge_round_cap),
        ] {
            if value == 0 {
                bail!("{name} must be at least 1");
            }
        }
        for tool in &self.tools {
            if !["calculator", "run_code", "search", "files"].contains(&tool.as_str()) {
                bail!("unknown tool `{tool}` (expected calculator, run_code, search or files)");
            }
        }
        if self.tools.iter().any(|t| t == "search") && self.corpus.is_none() {
            bail!("the search tool needs a corpus file");
        }
        Ok(())
    }

    pub fn coordinator(&self) -> CoordinatorConfig {
        CoordinatorConfig {
            max_retries: self.max_retries,
            max_iterations: self.max_iterations,
            executor: ExecutorConfig {
                model_id: self.executor_model.clone(),
                round_cap: self.executor_round_cap,
            },
            verifier: VerifierConfig {
                model_id: self.verifier_model.clone(),
                judge_round_cap: self.judge_round_cap,
                vf_timeout_s: self.vf_timeout_s,
            },
        }
    }

    pub fn http(&self) -> HttpConfig {
        let mut http = HttpConfig::from_env();
        if let Some(url) = &self.base_url {
            http.base_url = url.clone();
        }
        if let Some(key) = &self.api_key {
            http.api_key = Some(key.clone());
        }
        http.timeout = Duration::from_secs(self.request_timeout_s.max(1));
        http
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.planner_model, "gpt-4.1");
        assert_eq!(cfg.executor_model, "gpt-4o-mini");
        let coord = cfg.coordinator();
        assert_eq!((coord.max_retries, coord.max_iterations, coord.executor.round_cap), (3, 5, 20));
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"backend":"scripted","script":"s.json","harness":["python3","h.py"]}"#).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.script, Some(dir.path().join("s.json")));
        assert_eq!(cfg.harness, HarnessSetting::Command(vec!["python3".into(), "h.py".into()]));
        cfg.validate().unwrap();
    }

    #[test]
    fn scripted_needs_script() {
        let cfg = RunConfig {
            backend: BackendKind::Scripted,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
