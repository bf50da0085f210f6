//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use verimap_core::gateway::{Backend, Gateway, HttpBackend, PriceTable, ScriptedBackend};
use verimap_core::harness::{BuiltinHarness, SharedHarness, SubprocessHarness};
use verimap_core::metrics::{
    read_events, Clock, EventSink, GroundTruthLabel, JsonlStore, LogicalClock, Report, RunRecord, SystemClock,
    TraceRecorder,
};
use verimap_core::tools::{calculator_tool, corpus_search_tool, file_tools, run_code_tool, Corpus, ScratchDir};
use verimap_core::{parse_plan, run_task, validate_plan, PlannerConfig, RunContext, TaskStatus, ToolRegistry};

use crate::config::{BackendKind, HarnessSetting, RunConfig};
use crate::{ReportArgs, ReportFormat, RunArgs};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ENGINE_ERROR: u8 = 1;
pub const EXIT_TASK_FAILED: u8 = 2;
pub const EXIT_INVALID_PLAN: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
struct TaskSpec {
    task_id: String,
    task: String,
}

fn load_task(path: &Path) -> Result<TaskSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read task file {}", path.display()))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".into());
    if path.extension().is_some_and(|e| e == "json") {
        let v: Value = serde_json::from_str(&text).with_context(|| format!("invalid task JSON {}", path.display()))?;
        let task = v
            .get("task")
            .and_then(Value::as_str)
            .ok_or_else(|| anyhow!("{}: missing string field `task`", path.display()))?;
        let task_id = v.get("task_id").and_then(Value::as_str).map(str::to_owned).unwrap_or(stem);
        return Ok(TaskSpec {
            task_id,
            task: task.to_string(),
        });
    }
    let task = text.trim();
    if task.is_empty() {
        bail!("task file {} is empty", path.display());
    }
    Ok(TaskSpec {
        task_id: stem,
        task: task.to_string(),
    })
}

/// One line of `run` output.
#[derive(Debug, Clone, PartialEq, Serialize)]
struct RunSummary {
    run_id: String,
    task_id: String,
    status: TaskStatus,
    final_output: Option<Value>,
    iterations: usize,
    attempts: usize,
    cost_usd: Option<f64>,
}

fn effective_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(b) = args.backend {
        cfg.backend = b;
    }
    if let Some(s) = &args.script {
        cfg.script = Some(s.clone());
    }
    if let Some(n) = args.max_retries {
        cfg.max_retries = n;
    }
    if let Some(n) = args.max_iterations {
        cfg.max_iterations = n;
    }
    if let Some(p) = &args.trace_out {
        cfg.trace_out = Some(p.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Shared {
    cfg: RunConfig,
    script: Option<Value>,
    http: Option<Backend>,
    harness: SharedHarness,
    corpus: Option<Arc<Corpus>>,
    prices: PriceTable,
    sink: Option<Arc<dyn EventSink>>,
    deterministic: bool,
}

impl Shared {
    fn backend(&self) -> Result<Backend> {
        match (&self.script, &self.http) {
            (Some(script), _) => Ok(Arc::new(ScriptedBackend::from_json(script).map_err(|e| anyhow!("bad script: {e}"))?)),
            (None, Some(http)) => Ok(http.clone()),
            (None, None) => bail!("no backend configured"),
        }
    }

    fn registry(&self, scratch: &Path) -> Result<ToolRegistry> {
        let mut registry = ToolRegistry::new();
        for name in &self.cfg.tools {
            match name.as_str() {
                "calculator" => registry.register(calculator_tool())?,
                "run_code" => registry.register(run_code_tool(self.harness.clone()))?,
                "search" => {
                    let corpus = self.corpus.clone().ok_or_else(|| anyhow!("search tool without corpus"))?;
                    registry.register(corpus_search_tool(corpus))?;
                }
                "files" => {
                    let dir = Arc::new(ScratchDir::new(scratch)?);
                    for tool in file_tools(dir) {
                        registry.register(tool)?;
                    }
                }
                other => bail!("unknown tool `{other}`"),
            }
        }
        Ok(registry)
    }

    fn run_one(&self, index: usize, spec: &TaskSpec) -> Result<RunSummary> {
        let run_id = if self.deterministic {
            format!("run-{:04}", index + 1)
        } else {
            uuid::Uuid::new_v4().to_string()
        };
        let gateway = Gateway::new(self.backend()?);
        let scratch = tempfile::tempdir().context("cannot create scratch directory")?;
        let registry = self.registry(scratch.path())?;
        let clock: Arc<dyn Clock> = if self.deterministic {
            Arc::new(LogicalClock::new())
        } else {
            Arc::new(SystemClock)
        };
        let recorder = self
            .sink
            .as_ref()
            .map(|sink| TraceRecorder::new(sink.clone(), clock, run_id.clone()));
        let planner_cfg = PlannerConfig {
            model_id: self.cfg.planner_model.clone(),
            tool_descriptions: registry.render(),
            demo_example: self.cfg.demo_example.clone(),
            ..PlannerConfig::default()
        };
        let ctx = RunContext {
            gateway: &gateway,
            registry: &registry,
            harness: self.harness.clone(),
            recorder,
            prices: Some(&self.prices),
            task_id: Some(spec.task_id.clone()),
        };
        log::info!("{run_id}: starting task `{}`", spec.task_id);
        let outcome = run_task(&spec.task, &planner_cfg, &self.cfg.coordinator(), &ctx)
            .with_context(|| format!("task `{}` aborted", spec.task_id))?;
        Ok(RunSummary {
            run_id,
            task_id: spec.task_id.clone(),
            status: outcome.status,
            final_output: outcome
                .final_output
                .as_ref()
                .map(serde_json::to_value)
                .transpose()?,
            iterations: outcome.iterations_used,
            attempts: outcome.trace.total_attempts(),
            cost_usd: outcome.total_cost_usd,
        })
    }
}

pub fn run(args: &RunArgs) -> Result<u8> {
    let cfg = effective_config(args)?;
    let tasks = args.task_files.iter().map(|p| load_task(p)).collect::<Result<Vec<_>>>()?;

    let script = match cfg.backend {
        BackendKind::Scripted => {
            let path = cfg.script.as_ref().expect("validated");
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read script {}", path.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("invalid script {}", path.display()))?)
        }
        BackendKind::Http => None,
    };
    let http: Option<Backend> = match cfg.backend {
        BackendKind::Http => Some(Arc::new(HttpBackend::new(cfg.http())?)),
        BackendKind::Scripted => None,
    };
    let harness: SharedHarness = match &cfg.harness {
        HarnessSetting::Named(name) if name == "builtin" => Arc::new(BuiltinHarness::new()),
        HarnessSetting::Named(other) => bail!("unknown harness `{other}` (use \"builtin\" or a command array)"),
        HarnessSetting::Command(cmd) => Arc::new(SubprocessHarness::new(cmd.clone())),
    };
    let corpus = cfg.corpus.as_deref().map(Corpus::load).transpose()?.map(Arc::new);
    let prices = match &cfg.prices {
        Some(path) => PriceTable::load(path)?,
        None => PriceTable::reference(),
    };
    let sink: Option<Arc<dyn EventSink>> = match &cfg.trace_out {
        Some(path) => Some(Arc::new(JsonlStore::open(path.clone())?)),
        None => None,
    };
    if args.deterministic && args.parallel > 1 && sink.is_some() {
        log::warn!("parallel runs interleave trace events; use --parallel 1 for byte-identical traces");
    }
    let shared = Shared {
        cfg,
        script,
        http,
        harness,
        corpus,
        prices,
        sink,
        deterministic: args.deterministic,
    };

    let results = run_all(&shared, &tasks, args.parallel.max(1));
    let mut code = EXIT_OK;
    for result in results {
        let summary = result?;
        println!("{}", serde_json::to_string(&summary)?);
        if summary.status != TaskStatus::Success {
            code = EXIT_TASK_FAILED;
        }
    }
    Ok(code)
}

fn run_all(shared: &Shared, tasks: &[TaskSpec], workers: usize) -> Vec<Result<RunSummary>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunSummary>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(spec) = tasks.get(i) else { break };
                let result = shared.run_one(i, spec);
                slots.lock().expect("result slots poisoned")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.unwrap_or_else(|| Err(anyhow!("worker did not finish"))))
        .collect()
}

pub fn validate(path: &Path) -> Result<u8> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read plan {}", path.display()))?;
    let plan = match parse_plan(&text) {
        Ok(plan) => plan,
        Err(err) => {
            println!("{}", serde_json::json!({"ok": false, "parse_error": err.to_string()}));
            return Ok(EXIT_INVALID_PLAN);
        }
    };
    let report = validate_plan(&plan);
    println!("{}", serde_json::to_string(&report)?);
    Ok(if report.ok { EXIT_OK } else { EXIT_INVALID_PLAN })
}

fn load_labels(path: &PathBuf) -> Result<Vec<GroundTruthLabel>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read labels {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}: bad label", path.display(), i + 1)))
        .collect()
}

pub fn report(args: &ReportArgs) -> Result<u8> {
    let mut records = Vec::new();
    for path in &args.traces {
        let events = read_events(path)?;
        records.extend(RunRecord::from_events(&events));
    }
    if records.is_empty() {
        bail!("no runs found in the given traces");
    }
    let prices = match &args.prices {
        Some(path) => PriceTable::load(path)?,
        None => PriceTable::reference(),
    };
    let labels = args.labels.as_ref().map(load_labels).transpose()?;
    let report = Report::build(&records, &prices, labels.as_deref())?;
    match args.format {
        ReportFormat::Text => print!("{}", report.to_text()),
        ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_files_plain_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("sum.txt");
        std::fs::write(&plain, "  add 2 and 2\n").unwrap();
        assert_eq!(
            load_task(&plain).unwrap(),
            TaskSpec {
                task_id: "sum".into(),
                task: "add 2 and 2".into()
            }
        );
        let js = dir.path().join("t.json");
        std::fs::write(&js, r#"{"task_id":"q7","task":"x"}"#).unwrap();
        assert_eq!(load_task(&js).unwrap().task_id, "q7");
        std::fs::write(&js, r#"{"task":"x"}"#).unwrap();
        assert_eq!(load_task(&js).unwrap().task_id, "t");
        std::fs::write(&plain, "   ").unwrap();
        assert!(load_task(&plain).is_err());
    }
}
