use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::events::{EventKind, TraceEvent};
use crate::coordinator::{TaskOutcome, TaskStatus};
use crate::gateway::{cost_of, CallRecord, Component, CostError, PriceTable, TokenUsage};
use crate::plan::{parse_plan, Plan, VfKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no outcomes to evaluate")]
    EmptyInput,
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub task_id: String,
    pub final_answer_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeAttemptCount {
    pub iteration: usize,
    pub node_id: String,
    pub attempts: usize,
}

/// One verification function, either as authored in a plan or as executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VfUse {
    pub kind: VfKind,
    pub payload_chars: usize,
}

/// Per-run summary reconstructed from trace events or a finished outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub task_id: Option<String>,
    /// `None` when the trace has no outcome event.
    pub status: Option<TaskStatus>,
    pub plans_generated: usize,
    pub node_attempts: Vec<NodeAttemptCount>,
    pub vf_executions: Vec<VfUse>,
    pub vfs_authored: Vec<VfUse>,
    pub calls: Vec<CallRecord>,
}

impl RunRecord {
    fn empty(run_id: &str) -> Self {
        Self {
            run_id: run_id.to_string(),
            task_id: None,
            status: None,
            plans_generated: 0,
            node_attempts: Vec::new(),
            vf_executions: Vec::new(),
            vfs_authored: Vec::new(),
            calls: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Some(TaskStatus::Success)
    }

    fn add_plan(&mut self, plan: &Plan) {
        self.plans_generated += 1;
        for node in &plan.nodes {
            for vf in &node.verification {
                self.vfs_authored.push(VfUse {
                    kind: vf.kind,
                    payload_chars: vf.payload.chars().count(),
                });
            }
        }
    }

    fn bump_attempt(&mut self, iteration: usize, node_id: &str) {
        match self
            .node_attempts
            .iter_mut()
            .find(|c| c.iteration == iteration && c.node_id == node_id)
        {
            Some(c) => c.attempts += 1,
            None => self.node_attempts.push(NodeAttemptCount {
                iteration,
                node_id: node_id.to_string(),
                attempts: 1,
            }),
        }
    }

    /// Groups events by run, in order of each run's first event.
    pub fn from_events(events: &[TraceEvent]) -> Vec<RunRecord> {
        let mut order: Vec<String> = Vec::new();
        let mut records: HashMap<String, RunRecord> = HashMap::new();
        for event in events {
            let record = records.entry(event.run_id.clone()).or_insert_with(|| {
                order.push(event.run_id.clone());
                RunRecord::empty(&event.run_id)
            });
            match event.kind {
                EventKind::PlanGenerated => {
                    let plan = event
                        .payload
                        .get("plan")
                        .and_then(|p| parse_plan(&p.to_string()).ok());
                    match plan {
                        Some(plan) => record.add_plan(&plan),
                        None => record.plans_generated += 1,
                    }
                }
                EventKind::AttemptStarted => {
                    if let Some(node) = &event.node_id {
                        record.bump_attempt(event.iteration, node);
                    }
                }
                EventKind::VfResult => {
                    let kind = event
                        .payload
                        .get("kind")
                        .and_then(|k| serde_json::from_value::<VfKind>(k.clone()).ok());
                    if let Some(kind) = kind {
                        let payload_chars = event.payload.get("payload_chars").and_then(Value::as_u64).unwrap_or(0) as usize;
                        record.vf_executions.push(VfUse { kind, payload_chars });
                    }
                }
                EventKind::Outcome => {
                    record.task_id = event.payload.get("task_id").and_then(Value::as_str).map(str::to_owned);
                    record.status = event
                        .payload
                        .get("status")
                        .and_then(|s| serde_json::from_value(s.clone()).ok());
                    record.calls = event
                        .payload
                        .get("usage")
                        .and_then(|u| serde_json::from_value(u.clone()).ok())
                        .unwrap_or_default();
                }
                EventKind::ToolCall | EventKind::Verdict | EventKind::Replanned => {}
            }
        }
        order.into_iter().filter_map(|id| records.remove(&id)).collect()
    }

    /// Summary of a finished in-process run.
    pub fn from_outcome(run_id: &str, task_id: Option<&str>, outcome: &TaskOutcome) -> Self {
        let mut record = RunRecord::empty(run_id);
        record.task_id = task_id.map(str::to_owned);
        record.status = Some(outcome.status);
        for iteration in &outcome.trace.iterations {
            if let Some(plan) = &iteration.plan {
                record.add_plan(plan);
            }
            for attempt in &iteration.attempts {
                record.bump_attempt(iteration.iteration, &attempt.node_id);
                for result in &attempt.verdict.results {
                    record.vf_executions.push(VfUse {
                        kind: result.kind,
                        payload_chars: result.payload_chars,
                    });
                }
            }
        }
        record.calls = aggregate_usage(&outcome.trace.calls);
        record
    }
}

/// Sums usage per (component, model), ordered by component then model.
pub fn aggregate_usage(calls: &[CallRecord]) -> Vec<CallRecord> {
    let mut out: Vec<CallRecord> = Vec::new();
    for call in calls {
        match out
            .iter_mut()
            .find(|c| c.component == call.component && c.model_id == call.model_id)
        {
            Some(existing) => existing.usage += call.usage,
            None => out.push(call.clone()),
        }
    }
    out.sort_by(|a, b| a.component.cmp(&b.component).then_with(|| a.model_id.cmp(&b.model_id)));
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub planner: f64,
    pub executor: f64,
    pub verifier: f64,
    pub total: f64,
}

impl CostBreakdown {
    fn scaled(self, by: f64) -> Self {
        Self {
            planner: self.planner * by,
            executor: self.executor * by,
            verifier: self.verifier * by,
            total: self.total * by,
        }
    }

    fn add(self, other: Self) -> Self {
        Self {
            planner: self.planner + other.planner,
            executor: self.executor + other.executor,
            verifier: self.verifier + other.verifier,
            total: self.total + other.total,
        }
    }
}

/// USD per component; `total` is the sum of the three parts.
pub fn cost_report(calls: &[CallRecord], prices: &PriceTable) -> Result<CostBreakdown, CostError> {
    let mut by_component: HashMap<Component, f64> = HashMap::new();
    for call in calls {
        *by_component.entry(call.component).or_default() += cost_of(&call.usage, &call.model_id, prices)?;
    }
    let part = |c| by_component.get(&c).copied().unwrap_or(0.0);
    let (planner, executor, verifier) = (part(Component::Planner), part(Component::Executor), part(Component::Verifier));
    Ok(CostBreakdown {
        planner,
        executor,
        verifier,
        total: planner + executor + verifier,
    })
}

/// `(fp, fn)`: passed-but-wrong and failed-but-right, each over all outcomes.
pub fn fp_fn_rates(outcomes: &[(bool, GroundTruthLabel)]) -> Result<(f64, f64), MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = outcomes.len() as f64;
    let fp = outcomes.iter().filter(|(pass, l)| *pass && !l.final_answer_correct).count() as f64;
    let fn_ = outcomes.iter().filter(|(pass, l)| !*pass && l.final_answer_correct).count() as f64;
    Ok((fp / n, fn_ / n))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KindProfile {
    /// Checks run per task, re-runs on retries included.
    pub avg_executions_per_task: f64,
    /// Checks authored per task across all generated plans.
    pub avg_distinct_per_task: f64,
    /// Mean authored code or criterion length, in characters; 0 when none.
    pub avg_length_chars: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VfProfile {
    pub tasks: usize,
    pub executable: KindProfile,
    pub judge: KindProfile,
}

pub fn vf_profile(records: &[RunRecord]) -> VfProfile {
    let tasks = records.len();
    let kind_profile = |kind: VfKind| {
        if tasks == 0 {
            return KindProfile::default();
        }
        let executions = records.iter().flat_map(|r| &r.vf_executions).filter(|u| u.kind == kind).count();
        let authored: Vec<usize> = records
            .iter()
            .flat_map(|r| &r.vfs_authored)
            .filter(|u| u.kind == kind)
            .map(|u| u.payload_chars)
            .collect();
        KindProfile {
            avg_executions_per_task: executions as f64 / tasks as f64,
            avg_distinct_per_task: authored.len() as f64 / tasks as f64,
            avg_length_chars: if authored.is_empty() {
                0.0
            } else {
                authored.iter().sum::<usize>() as f64 / authored.len() as f64
            },
        }
    };
    VfProfile {
        tasks,
        executable: kind_profile(VfKind::Executable),
        judge: kind_profile(VfKind::Judge),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    /// Mean plans generated per task.
    pub iterations: f64,
    /// Mean over tasks of attempts per executed node.
    pub retries: f64,
}

pub fn averages(records: &[RunRecord]) -> Averages {
    if records.is_empty() {
        return Averages::default();
    }
    let n = records.len() as f64;
    let iterations = records.iter().map(|r| r.plans_generated as f64).sum::<f64>() / n;
    let retries = records
        .iter()
        .map(|r| {
            if r.node_attempts.is_empty() {
                0.0
            } else {
                r.node_attempts.iter().map(|c| c.attempts).sum::<usize>() as f64 / r.node_attempts.len() as f64
            }
        })
        .sum::<f64>()
        / n;
    Averages { iterations, retries }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpFn {
    pub labeled_tasks: usize,
    pub fp_rate: f64,
    pub fn_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tasks: usize,
    pub succeeded: usize,
    pub cost_total: CostBreakdown,
    pub cost_per_task: CostBreakdown,
    pub usage_total: TokenUsage,
    pub averages: Averages,
    pub vf_profile: VfProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fp_fn: Option<FpFn>,
}

impl Report {
    /// Builds the full report. FP/FN rates need `labels`; runs whose task
    /// has no label are left out of them.
    pub fn build(
        records: &[RunRecord],
        prices: &PriceTable,
        labels: Option<&[GroundTruthLabel]>,
    ) -> Result<Report, MetricsError> {
        if records.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        let mut cost_total = CostBreakdown::default();
        for record in records {
            cost_total = cost_total.add(cost_report(&record.calls, prices)?);
        }
        let fp_fn = match labels {
            None => None,
            Some(labels) => {
                let by_task: HashMap<&str, &GroundTruthLabel> =
                    labels.iter().map(|l| (l.task_id.as_str(), l)).collect();
                let pairs: Vec<(bool, GroundTruthLabel)> = records
                    .iter()
                    .filter_map(|r| {
                        let label = by_task.get(r.task_id.as_deref()?)?;
                        Some((r.passed(), (*label).clone()))
                    })
                    .collect();
                let (fp_rate, fn_rate) = fp_fn_rates(&pairs)?;
                Some(FpFn {
                    labeled_tasks: pairs.len(),
                    fp_rate,
                    fn_rate,
                })
            }
        };
        Ok(Report {
            tasks: records.len(),
            succeeded: records.iter().filter(|r| r.passed()).count(),
            cost_total,
            cost_per_task: cost_total.scaled(1.0 / records.len() as f64),
            usage_total: records.iter().flat_map(|r| &r.calls).map(|c| c.usage).sum(),
            averages: averages(records),
            vf_profile: vf_profile(records),
            fp_fn,
        })
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tasks: {} ({} succeeded)", self.tasks, self.succeeded);
        let _ = writeln!(
            out,
            "tokens: {} input ({} cached), {} output",
            self.usage_total.input_tokens, self.usage_total.cached_input_tokens, self.usage_total.output_tokens
        );
        let _ = writeln!(out, "\n{:<10} {:>14} {:>14}", "cost (USD)", "total", "per task");
        for (name, total, per) in [
            ("planner", self.cost_total.planner, self.cost_per_task.planner),
            ("executor", self.cost_total.executor, self.cost_per_task.executor),
            ("verifier", self.cost_total.verifier, self.cost_per_task.verifier),
            ("total", self.cost_total.total, self.cost_per_task.total),
        ] {
            let _ = writeln!(out, "{name:<10} {total:>14.6} {per:>14.6}");
        }
        let _ = writeln!(out, "\n{:<22} {:>10}", "averages", "per task");
        let _ = writeln!(out, "{:<22} {:>10.3}", "iterations", self.averages.iterations);
        let _ = writeln!(out, "{:<22} {:>10.3}", "attempts per node", self.averages.retries);
        let _ = writeln!(
            out,
            "\n{:<12} {:>12} {:>12} {:>12}",
            "checks", "runs/task", "authored", "avg chars"
        );
        for (name, p) in [("executable", self.vf_profile.executable), ("judge", self.vf_profile.judge)] {
            let _ = writeln!(
                out,
                "{name:<12} {:>12.3} {:>12.3} {:>12.1}",
                p.avg_executions_per_task, p.avg_distinct_per_task, p.avg_length_chars
            );
        }
        if let Some(fp_fn) = &self.fp_fn {
            let _ = writeln!(out, "\n{:<22} {:>10}", "verification accuracy", "rate");
            let _ = writeln!(out, "{:<22} {:>10.4}", "false positive", fp_fn.fp_rate);
            let _ = writeln!(out, "{:<22} {:>10.4}", "false negative", fp_fn.fn_rate);
            let _ = writeln!(out, "{:<22} {:>10}", "labeled tasks", fp_fn.labeled_tasks);
        }
        out
    }
}
