//! Plan generation and replanning.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::TaskTrace;
use crate::gateway::{ChatRequest, Component, Gateway, GatewayError, Message};
use crate::plan::{parse_plan, validate_plan, Plan, PlanError, PREVIOUS_ATTEMPT};
use crate::prompts;
use crate::text::truncate_chars;

pub const DEFAULT_MAX_PARSE_RETRIES: usize = 2;
/// Ancestor generations included in a failure excerpt.
pub const FAILURE_ANCESTOR_DEPTH: usize = 2;
pub const FAILURE_EXCERPT_MAX_CHARS: usize = 8_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub model_id: String,
    /// Rendered tool list for the `{available_tools}` slot.
    pub tool_descriptions: String,
    #[serde(default)]
    pub demo_example: Option<String>,
    pub max_parse_retries: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            model_id: "gpt-4.1".to_string(),
            tool_descriptions: String::new(),
            demo_example: None,
            max_parse_retries: DEFAULT_MAX_PARSE_RETRIES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureContext {
    pub previous_plan_json: String,
    pub failed_node_id: String,
    pub trace_excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanningError {
    #[error("plan generation failed after {attempts} attempt(s): {}", .violations.join("; "))]
    GenerationFailed { attempts: usize, violations: Vec<String> },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub fn build_planning_prompt(task: &str, cfg: &PlannerConfig) -> String {
    let tools = if cfg.tool_descriptions.trim().is_empty() {
        "none"
    } else {
        cfg.tool_descriptions.as_str()
    };
    match &cfg.demo_example {
        Some(demo) => prompts::render(
            prompts::PLANNER,
            &[("available_tools", tools), ("task_instruction", task), ("demo_example", demo)],
        ),
        None => {
            // Drop the separator that precedes the demo slot as well.
            let template = prompts::PLANNER.replace("{task_instruction} {demo_example}", "{task_instruction}");
            prompts::render(&template, &[("available_tools", tools), ("task_instruction", task)])
        }
    }
}

pub fn build_replanning_prompt(base_prompt: &str, fc: &FailureContext) -> String {
    let failed_context = if fc.trace_excerpt.trim().is_empty() {
        format!("Failed node: {}", fc.failed_node_id)
    } else {
        format!("Failed node: {}\n\n{}", fc.failed_node_id, fc.trace_excerpt)
    };
    let block = prompts::render(
        prompts::REPLAN,
        &[
            ("previous_dag_str", &fc.previous_plan_json),
            ("failed_context", &failed_context),
        ],
    );
    format!("{}\n\n{block}", base_prompt.trim_end())
}

fn json_or_none(text: String) -> String {
    if text == "{}" || text.is_empty() {
        "(none)".to_string()
    } else {
        text
    }
}

/// Failure excerpt for `failed_node` from the last iteration of `trace`:
/// the failed node's attempts (latest first) with all verifier feedback,
/// then each ancestor within two generations, nearest first.
pub fn extract_failure_context(plan: &Plan, trace: &TaskTrace, failed_node: &str) -> Result<FailureContext, PlanError> {
    let node = plan
        .node(failed_node)
        .ok_or_else(|| PlanError::UnknownNode(failed_node.to_string()))?;
    let attempts: Vec<_> = trace
        .iterations
        .last()
        .map(|it| it.attempts.iter().collect())
        .unwrap_or_default();

    let mut excerpt = String::new();
    let _ = writeln!(excerpt, "Node {} (failed): {}", node.id, node.name);
    let _ = writeln!(excerpt, "Instruction: {}", node.instruction);
    let own: Vec<_> = attempts.iter().filter(|a| a.node_id == failed_node).collect();
    if let Some(first) = own.first() {
        let mut inputs = first.context.clone();
        inputs.remove(PREVIOUS_ATTEMPT);
        let _ = writeln!(excerpt, "Inputs: {}", json_or_none(inputs.to_json()));
    }
    for attempt in own.iter().rev() {
        let output = if !attempt.execution.outputs.is_empty() {
            attempt.execution.outputs.to_json()
        } else {
            attempt
                .execution
                .answer
                .clone()
                .map(|a| truncate_chars(&a, 1_000).to_string())
                .unwrap_or_else(|| "(none)".to_string())
        };
        let _ = writeln!(excerpt, "Attempt {} output: {}", attempt.attempt, output);
        let _ = writeln!(excerpt, "Attempt {} verifier feedback:\n{}", attempt.attempt, attempt.verdict.feedback_bundle);
    }

    for (ancestor_id, depth) in plan.ancestors_within(failed_node, Some(FAILURE_ANCESTOR_DEPTH)) {
        let Some(ancestor) = plan.node(&ancestor_id) else { continue };
        let relation = if depth == 1 { "parent" } else { "grandparent" };
        let _ = writeln!(excerpt, "\nNode {} ({relation}): {}", ancestor.id, ancestor.name);
        let _ = writeln!(excerpt, "Instruction: {}", ancestor.instruction);
        if let Some(last) = attempts.iter().rev().find(|a| a.node_id == ancestor_id) {
            let mut inputs = last.context.clone();
            inputs.remove(PREVIOUS_ATTEMPT);
            let _ = writeln!(excerpt, "Inputs: {}", json_or_none(inputs.to_json()));
            let _ = writeln!(excerpt, "Output: {}", json_or_none(last.execution.outputs.to_json()));
        }
    }

    Ok(FailureContext {
        previous_plan_json: plan.to_json_string(),
        failed_node_id: failed_node.to_string(),
        trace_excerpt: truncate_chars(excerpt.trim_end(), FAILURE_EXCERPT_MAX_CHARS).to_string(),
    })
}

/// Asks the planner model for a plan, re-asking with the problems found
/// until a plan parses and validates or the retry budget is spent.
pub fn generate_plan(
    gateway: &Gateway,
    cfg: &PlannerConfig,
    task: &str,
    fc: Option<&FailureContext>,
) -> Result<Plan, PlanningError> {
    let base = build_planning_prompt(task, cfg);
    let prompt = match fc {
        Some(fc) => build_replanning_prompt(&base, fc),
        None => base,
    };
    let mut messages = vec![Message::user(prompt)];
    let mut problems = Vec::new();
    for attempt in 0..=cfg.max_parse_retries {
        let request = ChatRequest::new(Component::Planner, &cfg.model_id, messages.clone());
        let response = gateway.complete(&request)?;
        problems = match parse_plan(&response.content) {
            Err(err) => vec![format!("parse error: {err}")],
            Ok(plan) => {
                let report = validate_plan(&plan);
                if report.ok {
                    return Ok(plan);
                }
                report.violations.iter().map(ToString::to_string).collect()
            }
        };
        log::debug!("planner attempt {} rejected: {:?}", attempt + 1, problems);
        messages.push(Message::assistant(response.content));
        messages.push(Message::user(format!(
            "The plan you returned is invalid:\n- {}\n\nReturn a corrected plan as bare JSON in the same format.",
            problems.join("\n- ")
        )));
    }
    Err(PlanningError::GenerationFailed {
        attempts: cfg.max_parse_retries + 1,
        violations: problems,
    })
}
