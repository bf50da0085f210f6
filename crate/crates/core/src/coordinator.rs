//! Task coordinator: plan, execute and verify node by node, retry, replan.
//!
//! Nodes run sequentially in topological order. Each node gets up to
//! `max_retries` attempts; a retry sees the previous attempt's outputs and
//! verifier feedback under `PREVIOUS_ATTEMPT`. When a node runs out of
//! attempts the planner is asked for a new plan, seeded with the failed plan
//! and a failure excerpt, and execution restarts from scratch. After
//! `max_iterations` plans the task fails.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::executor::{run_subtask, ExecutionResult, ExecutorConfig, StepKind};
use crate::gateway::{CallRecord, Gateway, GatewayError, PriceTable};
use crate::harness::{HarnessError, SharedHarness};
use crate::metrics::{EventKind, StoreError, TraceRecorder};
use crate::plan::{resolve_input_refs, topological_order, Plan, PlanError, PREVIOUS_ATTEMPT};
use crate::planner::{extract_failure_context, generate_plan, FailureContext, PlannerConfig, PlanningError};
use crate::record::StructuredRecord;
use crate::tools::ToolRegistry;
use crate::verifier::{verify_node, VerdictReport, VerifierConfig, VerifierDeps, VerifyError};

pub const DEFAULT_MAX_RETRIES: usize = 3;
pub const DEFAULT_MAX_ITERATIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorConfig {
    /// Total execute-and-verify attempts per node per iteration.
    pub max_retries: usize,
    /// Plans generated at most per task.
    pub max_iterations: usize,
    pub executor: ExecutorConfig,
    pub verifier: VerifierConfig,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        Self {
            max_retries: DEFAULT_MAX_RETRIES,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            executor: ExecutorConfig::default(),
            verifier: VerifierConfig::default(),
        }
    }
}

impl CoordinatorConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |what: &str| Err(EngineError::InvalidConfig(format!("{what} must be at least 1")));
        if self.max_retries == 0 {
            return bad("max_retries");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations");
        }
        if self.executor.round_cap == 0 {
            return bad("executor round cap");
        }
        if self.verifier.judge_round_cap == 0 {
            return bad("judge round cap");
        }
        Ok(())
    }
}

/// Infrastructure failures that abort a run (as opposed to task failure).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Trace(#[from] StoreError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("internal plan inconsistency: {0}")]
    Plan(#[from] PlanError),
}

impl From<VerifyError> for EngineError {
    fn from(err: VerifyError) -> Self {
        match err {
            VerifyError::Gateway(e) => EngineError::Gateway(e),
            VerifyError::Harness(e) => EngineError::Harness(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Success,
    Failure,
}

/// One execute-and-verify attempt of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAttempt {
    pub node_id: String,
    /// 1-based attempt index within the iteration.
    pub attempt: usize,
    pub context: StructuredRecord,
    pub context_digest: String,
    pub execution: ExecutionResult,
    pub verdict: VerdictReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    /// 1-based.
    pub iteration: usize,
    pub plan: Option<Plan>,
    pub plan_json: Option<String>,
    pub order: Vec<String>,
    pub attempts: Vec<NodeAttempt>,
    pub failed_node: Option<String>,
    /// Set when no valid plan could be obtained for this iteration.
    pub plan_error: Option<String>,
}

impl IterationTrace {
    pub fn attempts_for(&self, node_id: &str) -> usize {
        self.attempts.iter().filter(|a| a.node_id == node_id).count()
    }

    /// Node ids in the order they were first executed.
    pub fn executed_order(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for a in &self.attempts {
            if !out.contains(&a.node_id.as_str()) {
                out.push(&a.node_id);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskTrace {
    pub iterations: Vec<IterationTrace>,
    /// Every model call made during the run.
    pub calls: Vec<CallRecord>,
}

impl TaskTrace {
    pub fn plans_generated(&self) -> usize {
        self.iterations.iter().filter(|it| it.plan.is_some()).count()
    }

    pub fn total_attempts(&self) -> usize {
        self.iterations.iter().map(|it| it.attempts.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub status: TaskStatus,
    pub final_output: Option<StructuredRecord>,
    pub trace: TaskTrace,
    pub iterations_used: usize,
    /// `None` without a price table or when a model has no price.
    pub total_cost_usd: Option<f64>,
}

/// Shared services for one run.
pub struct RunContext<'a> {
    pub gateway: &'a Gateway,
    pub registry: &'a ToolRegistry,
    pub harness: SharedHarness,
    pub recorder: Option<TraceRecorder>,
    pub prices: Option<&'a PriceTable>,
    pub task_id: Option<String>,
}

impl RunContext<'_> {
    fn emit(&self, iteration: usize, node_id: Option<&str>, kind: EventKind, payload: Value) -> Result<(), EngineError> {
        if let Some(recorder) = &self.recorder {
            recorder.emit(iteration, node_id, kind, payload)?;
        }
        Ok(())
    }
}

/// Outputs and feedback of a rejected attempt, handed to the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorAttempt {
    pub outputs: Value,
    pub feedback: String,
}

impl PriorAttempt {
    fn from_attempt(execution: &ExecutionResult, verdict: &VerdictReport) -> Self {
        let outputs = if execution.succeeded {
            execution.outputs.to_value()
        } else {
            execution.answer.clone().map(Value::String).unwrap_or(Value::Null)
        };
        Self {
            outputs,
            feedback: verdict.feedback_bundle.clone(),
        }
    }
}

/// The node's resolved inputs, plus `PREVIOUS_ATTEMPT` on retries.
pub fn compile_context(
    plan: &Plan,
    node_id: &str,
    blackboard: &HashMap<String, StructuredRecord>,
    user_task: &str,
    prior: Option<&PriorAttempt>,
) -> Result<StructuredRecord, PlanError> {
    let mut context = resolve_input_refs(plan, node_id, blackboard, user_task)?;
    if let Some(prior) = prior {
        context.insert(
            PREVIOUS_ATTEMPT,
            json!({"outputs": prior.outputs, "feedback": prior.feedback}),
        );
    }
    Ok(context)
}

/// Runs `task` to a verified result or to failure.
pub fn run_task(
    task: &str,
    planner_cfg: &PlannerConfig,
    cfg: &CoordinatorConfig,
    ctx: &RunContext<'_>,
) -> Result<TaskOutcome, EngineError> {
    cfg.validate()?;
    let calls_before = ctx.gateway.calls().len();
    let mut trace = TaskTrace::default();
    let mut failure_context: Option<FailureContext> = None;
    let verifier_deps = VerifierDeps {
        gateway: ctx.gateway,
        registry: ctx.registry,
        harness: &ctx.harness,
        cfg: &cfg.verifier,
    };
    let mut final_output = None;

    for iteration in 1..=cfg.max_iterations {
        let plan = match generate_plan(ctx.gateway, planner_cfg, task, failure_context.as_ref()) {
            Ok(plan) => plan,
            Err(PlanningError::Gateway(err)) => return Err(err.into()),
            Err(err @ PlanningError::GenerationFailed { .. }) => {
                log::warn!("iteration {iteration}: {err}");
                trace.iterations.push(IterationTrace {
                    iteration,
                    plan: None,
                    plan_json: None,
                    order: Vec::new(),
                    attempts: Vec::new(),
                    failed_node: None,
                    plan_error: Some(err.to_string()),
                });
                break;
            }
        };
        let order = topological_order(&plan)?;
        let plan_json = plan.to_json_string();
        ctx.emit(
            iteration,
            None,
            EventKind::PlanGenerated,
            json!({"plan": plan.to_json(), "order": order, "final_node": plan.final_node_id}),
        )?;
        trace.iterations.push(IterationTrace {
            iteration,
            plan: Some(plan.clone()),
            plan_json: Some(plan_json),
            order: order.clone(),
            attempts: Vec::new(),
            failed_node: None,
            plan_error: None,
        });

        let mut blackboard: HashMap<String, StructuredRecord> = HashMap::new();
        let mut failed_node = None;
        for node_id in &order {
            let node = plan.node(node_id).ok_or_else(|| PlanError::UnknownNode(node_id.clone()))?;
            let mut prior: Option<PriorAttempt> = None;
            let mut verified = false;
            for attempt in 1..=cfg.max_retries {
                let context = compile_context(&plan, node_id, &blackboard, task, prior.as_ref())?;
                let digest = context.digest();
                ctx.emit(
                    iteration,
                    Some(node_id),
                    EventKind::AttemptStarted,
                    json!({"attempt": attempt, "context_digest": digest}),
                )?;
                let execution = run_subtask(ctx.gateway, ctx.registry, node, &context, &cfg.executor)?;
                for entry in &execution.transcript {
                    if entry.step.kind == StepKind::Action {
                        ctx.emit(
                            iteration,
                            Some(node_id),
                            EventKind::ToolCall,
                            json!({
                                "attempt": attempt,
                                "tool": entry.step.action_name,
                                "input": entry.step.action_input_json,
                                "is_error": entry.is_error,
                            }),
                        )?;
                    }
                }
                let verdict = if execution.succeeded {
                    let inputs = {
                        let mut inputs = context.clone();
                        inputs.remove(PREVIOUS_ATTEMPT);
                        inputs
                    };
                    verify_node(&verifier_deps, node, &inputs, &execution.outputs)?
                } else {
                    let reason = execution
                        .failure
                        .as_ref()
                        .map(ToString::to_string)
                        .unwrap_or_else(|| "execution failed".to_string());
                    VerdictReport::precondition_failed(reason)
                };
                for result in &verdict.results {
                    ctx.emit(
                        iteration,
                        Some(node_id),
                        EventKind::VfResult,
                        json!({
                            "attempt": attempt,
                            "vf_name": result.vf_name,
                            "kind": result.kind,
                            "passed": result.passed,
                            "feedback": result.feedback,
                            "payload_chars": result.payload_chars,
                        }),
                    )?;
                }
                ctx.emit(
                    iteration,
                    Some(node_id),
                    EventKind::Verdict,
                    json!({
                        "attempt": attempt,
                        "passed": verdict.passed,
                        "rounds_used": execution.rounds_used,
                        "failed_vfs": verdict.failed_names(),
                        "precondition_failure": verdict.precondition_failure,
                        "feedback_bundle": verdict.feedback_bundle,
                    }),
                )?;
                let passed = verdict.passed;
                let outputs = execution.outputs.clone();
                let next_prior = (!passed).then(|| PriorAttempt::from_attempt(&execution, &verdict));
                let current = trace.iterations.last_mut().expect("iteration pushed above");
                current.attempts.push(NodeAttempt {
                    node_id: node_id.clone(),
                    attempt,
                    context,
                    context_digest: digest,
                    execution,
                    verdict,
                });
                if passed {
                    blackboard.insert(node_id.clone(), outputs);
                    verified = true;
                    break;
                }
                prior = next_prior;
            }
            if !verified {
                failed_node = Some(node_id.clone());
                break;
            }
        }

        match failed_node {
            None => {
                let final_id = plan.final_node_id.clone().ok_or_else(|| {
                    EngineError::InvalidConfig("validated plan has no final node".into())
                })?;
                final_output = blackboard.remove(&final_id);
                break;
            }
            Some(failed) => {
                trace.iterations.last_mut().expect("iteration pushed above").failed_node = Some(failed.clone());
                if iteration == cfg.max_iterations {
                    break;
                }
                failure_context = Some(extract_failure_context(&plan, &trace, &failed)?);
                ctx.emit(
                    iteration,
                    Some(&failed),
                    EventKind::Replanned,
                    json!({"failed_node": failed, "next_iteration": iteration + 1}),
                )?;
            }
        }
    }

    trace.calls = ctx.gateway.calls()[calls_before..].to_vec();
    let status = if final_output.is_some() {
        TaskStatus::Success
    } else {
        TaskStatus::Failure
    };
    let total_cost_usd = ctx.prices.and_then(|prices| {
        crate::metrics::cost_report(&trace.calls, prices)
            .map_err(|e| log::warn!("cost unavailable: {e}"))
            .ok()
            .map(|c| c.total)
    });
    let iterations_used = trace.iterations.len();
    let usage = crate::metrics::aggregate_usage(&trace.calls);
    ctx.emit(
        iterations_used,
        None,
        EventKind::Outcome,
        json!({
            "task_id": ctx.task_id,
            "status": status,
            "final_output": final_output.as_ref().map(StructuredRecord::to_value),
            "iterations": iterations_used,
            "usage": usage,
        }),
    )?;
    Ok(TaskOutcome {
        status,
        final_output,
        trace,
        iterations_used,
        total_cost_usd,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gateway::{Component, ScriptedBackend};
    use crate::harness::BuiltinHarness;

    const PLAN: &str = r#"{"nodes":[{"id":"n1","name":"solve","instruction":"Compute 2+2.","input":["USER_TASK"],"output":["ans"],"verification":[{"name":"is_four","type":"python","code":"assert outputs['ans'] == 4"}]}],"edges":[]}"#;

    fn run(backend: Arc<ScriptedBackend>, cfg: &CoordinatorConfig) -> TaskOutcome {
        let gateway = Gateway::new(backend);
        let registry = ToolRegistry::new();
        let ctx = RunContext {
            gateway: &gateway,
            registry: &registry,
            harness: Arc::new(BuiltinHarness),
            recorder: None,
            prices: Some(&PriceTable::reference()),
            task_id: None,
        };
        run_task("What is 2+2?", &PlannerConfig::default(), cfg, &ctx).unwrap()
    }

    #[test]
    fn defaults() {
        let cfg = CoordinatorConfig::default();
        assert_eq!((cfg.max_retries, cfg.max_iterations, cfg.executor.round_cap), (3, 5, 20));
        assert_eq!(cfg.verifier.judge_round_cap, 10);
    }

    #[test]
    fn retry_then_pass() {
        let backend = Arc::new(ScriptedBackend::new());
        backend.enqueue_for(Component::Planner, [PLAN]);
        backend.enqueue_for(
            Component::Executor,
            ["Thought: t\nAnswer: {\"ans\": 5}", "Thought: t\nAnswer: {\"ans\": 4}"],
        );
        let outcome = run(backend.clone(), &CoordinatorConfig::default());
        assert_eq!(outcome.status, TaskStatus::Success);
        assert_eq!(outcome.iterations_used, 1);
        let attempts = &outcome.trace.iterations[0].attempts;
        assert_eq!(attempts.len(), 2);
        assert!(attempts[0].verdict.feedback_bundle.contains("AssertionError"));
        assert!(!attempts[0].context.contains(PREVIOUS_ATTEMPT));
        let prev = attempts[1].context.get(PREVIOUS_ATTEMPT).unwrap();
        assert!(prev["feedback"].as_str().unwrap().contains("[is_four]"));
        assert_eq!(prev["outputs"]["ans"], 5);
        assert_eq!(outcome.final_output.unwrap().get("ans"), Some(&json!(4)));
        assert!(outcome.total_cost_usd.unwrap() > 0.0);
    }

    #[test]
    fn compile_context_user_task_only() {
        let plan = crate::plan::parse_plan(PLAN).unwrap();
        let ctx = compile_context(&plan, "n1", &HashMap::new(), "Q?", None).unwrap();
        assert_eq!(ctx.to_json(), r#"{"USER_TASK":"Q?"}"#);
    }

    #[test]
    fn zero_limits_rejected() {
        let cfg = CoordinatorConfig {
            max_retries: 0,
            ..CoordinatorConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(EngineError::InvalidConfig(_))));
    }
}
