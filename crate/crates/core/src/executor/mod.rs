//! ReAct executor for a single plan node.
//!
//! The executor sees only the node's instruction and its resolved context,
//! never the global task. It alternates model turns with tool observations
//! until the model gives an `Answer:` or the round cap is reached, then
//! extracts the node's declared outputs from the answer.

mod react;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{ChatRequest, Component, Gateway, GatewayError, Message};
use crate::plan::{PlanNode, PREVIOUS_ATTEMPT};
use crate::prompts;
use crate::record::StructuredRecord;
use crate::text::strip_code_fence;
use crate::tools::ToolRegistry;

pub use react::{parse_react_step, ReactStep, StepKind};

pub const DEFAULT_ROUND_CAP: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutorConfig {
    pub model_id: String,
    pub round_cap: usize,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            model_id: "gpt-4o-mini".to_string(),
            round_cap: DEFAULT_ROUND_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum StructuredOutputError {
    #[error("answer is not valid JSON: {0}")]
    NotJson(String),
    #[error("answer must be a JSON object, got {0}")]
    NotObject(String),
    #[error("answer is missing required output variable(s): {}", .0.join(", "))]
    Missing(Vec<String>),
}

/// Parses an answer into a record holding at least `expected` keys.
pub fn extract_structured_output(
    answer: &str,
    expected: &[String],
) -> Result<StructuredRecord, StructuredOutputError> {
    let body = strip_code_fence(answer.trim());
    let value: Value = serde_json::from_str(body).map_err(|e| StructuredOutputError::NotJson(e.to_string()))?;
    let Value::Object(map) = value else {
        let kind = match value {
            Value::Null => "null",
            Value::Bool(_) => "a boolean",
            Value::Number(_) => "a number",
            Value::String(_) => "a string",
            _ => "an array",
        };
        return Err(StructuredOutputError::NotObject(kind.to_string()));
    };
    let missing: Vec<String> = expected
        .iter()
        .filter(|name| !map.contains_key(name.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(StructuredOutputError::Missing(missing));
    }
    Ok(StructuredRecord::from(map))
}

/// Why an execution did not produce outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum ExecutionFailure {
    RoundCapExhausted { rounds: usize },
    StructuredOutput(StructuredOutputError),
}

impl std::fmt::Display for ExecutionFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExecutionFailure::RoundCapExhausted { rounds } => {
                write!(f, "executor reached the round cap of {rounds} without giving an answer")
            }
            ExecutionFailure::StructuredOutput(err) => write!(f, "structured output error: {err}"),
        }
    }
}

/// One model turn and what came back from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub completion: String,
    pub step: ReactStep,
    /// Tool observation (actions) or corrective message (malformed turns).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<String>,
    #[serde(default)]
    pub is_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub outputs: StructuredRecord,
    pub transcript: Vec<TranscriptEntry>,
    pub rounds_used: usize,
    pub succeeded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<ExecutionFailure>,
}

/// Result of the shared agent loop before output extraction.
pub(crate) struct LoopOutcome {
    pub messages: Vec<Message>,
    pub transcript: Vec<TranscriptEntry>,
    pub rounds_used: usize,
    pub answer: Option<String>,
}

pub(crate) struct AgentLoop<'a> {
    pub gateway: &'a Gateway,
    pub registry: &'a ToolRegistry,
    pub component: Component,
    pub model_id: &'a str,
    pub round_cap: usize,
    /// Reminder appended to the corrective message for malformed turns.
    pub answer_hint: String,
}

impl AgentLoop<'_> {
    /// Runs turns until an answer or the round cap. `interpret` classifies
    /// each completion.
    pub fn run(
        &self,
        system: String,
        user: String,
        interpret: impl Fn(&str) -> ReactStep,
    ) -> Result<LoopOutcome, GatewayError> {
        let mut messages = vec![Message::system(system), Message::user(user)];
        let mut transcript = Vec::new();
        let mut rounds_used = 0;
        while rounds_used < self.round_cap {
            let request = ChatRequest::new(self.component, self.model_id, messages.clone());
            let response = self.gateway.complete(&request)?;
            rounds_used += 1;
            let step = interpret(&response.content);
            messages.push(Message::assistant(response.content.clone()));
            match step.kind {
                StepKind::FinalAnswer => {
                    let answer = step.answer.clone();
                    transcript.push(TranscriptEntry {
                        completion: response.content,
                        step,
                        observation: None,
                        is_error: false,
                    });
                    return Ok(LoopOutcome {
                        messages,
                        transcript,
                        rounds_used,
                        answer,
                    });
                }
                StepKind::Action => {
                    let name = step.action_name.as_deref().unwrap_or_default();
                    let args = step.action_input_json.as_deref().unwrap_or("{}");
                    let result = self.registry.invoke(name, args);
                    log::debug!("tool {name} -> error={} ", result.is_error);
                    messages.push(Message::user(format!("Observation: {}", result.observation)));
                    transcript.push(TranscriptEntry {
                        completion: response.content,
                        step,
                        observation: Some(result.observation),
                        is_error: result.is_error,
                    });
                }
                StepKind::Malformed => {
                    let note = format!(
                        "Your last message did not follow the required format ({}). \
                         Start with a Thought, then either give `Action:` with a tool name and \
                         `Action Input:` with a JSON object, or give `Answer:`. {}",
                        step.diagnostic.as_deref().unwrap_or("unrecognized format"),
                        self.answer_hint
                    );
                    messages.push(Message::user(note.clone()));
                    transcript.push(TranscriptEntry {
                        completion: response.content,
                        step,
                        observation: Some(note),
                        is_error: true,
                    });
                }
            }
        }
        Ok(LoopOutcome {
            messages,
            transcript,
            rounds_used,
            answer: None,
        })
    }
}

pub fn build_system_prompt(registry: &ToolRegistry) -> String {
    prompts::render(prompts::EXECUTOR_SYSTEM, &[("tool_desc", &registry.render())])
}

/// The pinned task prompt followed by the output guide for `node`.
pub fn build_task_prompt(node: &PlanNode, context: &StructuredRecord) -> String {
    let contexts = context.to_json_pretty();
    let mut prompt = prompts::render(
        prompts::EXECUTOR_TASK,
        &[
            ("subtask", &node.name),
            ("instruction", &node.instruction),
            ("contexts", &contexts),
        ],
    );
    prompt.push_str("\n\n**Expected Output**\n\n");
    prompt.push_str(&output_hint(&node.outputs));
    if context.contains(PREVIOUS_ATTEMPT) {
        prompt.push_str(
            "\n\nThe context contains PREVIOUS_ATTEMPT: the outputs of your previous attempt at this \
             subtask and the verifier feedback explaining why they were rejected. Address that \
             feedback in this attempt.",
        );
    }
    prompt.push('\n');
    prompt
}

fn output_hint(outputs: &[String]) -> String {
    if outputs.is_empty() {
        "Your final Answer must be a JSON object; it may be empty ({}).".to_string()
    } else {
        let keys: Vec<String> = outputs.iter().map(|o| format!("\"{o}\"")).collect();
        format!(
            "Your final Answer must be a single JSON object containing the keys {}.",
            keys.join(", ")
        )
    }
}

/// Runs one node through the ReAct loop.
pub fn run_subtask(
    gateway: &Gateway,
    registry: &ToolRegistry,
    node: &PlanNode,
    context: &StructuredRecord,
    cfg: &ExecutorConfig,
) -> Result<ExecutionResult, GatewayError> {
    let agent = AgentLoop {
        gateway,
        registry,
        component: Component::Executor,
        model_id: &cfg.model_id,
        round_cap: cfg.round_cap,
        answer_hint: output_hint(&node.outputs),
    };
    let outcome = agent.run(build_system_prompt(registry), build_task_prompt(node, context), parse_react_step)?;
    let (outputs, succeeded, failure) = match &outcome.answer {
        None => (
            StructuredRecord::new(),
            false,
            Some(ExecutionFailure::RoundCapExhausted {
                rounds: outcome.rounds_used,
            }),
        ),
        Some(answer) => match extract_structured_output(answer, &node.outputs) {
            Ok(record) => (record, true, None),
            Err(err) => (StructuredRecord::new(), false, Some(ExecutionFailure::StructuredOutput(err))),
        },
    };
    Ok(ExecutionResult {
        outputs,
        transcript: outcome.transcript,
        rounds_used: outcome.rounds_used,
        succeeded,
        answer: outcome.answer,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gateway::ScriptedBackend;
    use crate::tools::calculator_tool;
    use serde_json::json;

    fn setup(script: &[&str]) -> (Gateway, Arc<ScriptedBackend>, ToolRegistry) {
        let backend = Arc::new(ScriptedBackend::new());
        backend.enqueue(script.iter().copied());
        let gateway = Gateway::new(backend.clone());
        let mut registry = ToolRegistry::new();
        registry.register(calculator_tool()).unwrap();
        (gateway, backend, registry)
    }

    fn node() -> PlanNode {
        PlanNode::new("n1", "Add two and two.").with_outputs(["ans"])
    }

    #[test]
    fn extract_outputs() {
        let want = vec!["ans".to_string()];
        assert_eq!(
            extract_structured_output(r#"{"ans": 4}"#, &want).unwrap().get("ans"),
            Some(&json!(4))
        );
        assert_eq!(
            extract_structured_output(r#"{"x":1}"#, &want),
            Err(StructuredOutputError::Missing(want.clone()))
        );
        let fenced = extract_structured_output("```json\n{\"ans\":4}\n```", &want).unwrap();
        assert_eq!(fenced.get("ans"), Some(&json!(4)));
        let extra = extract_structured_output(r#"{"ans":1,"note":"x"}"#, &want).unwrap();
        assert_eq!(extra.len(), 2);
        assert!(matches!(extract_structured_output("four", &want), Err(StructuredOutputError::NotJson(_))));
        assert!(matches!(extract_structured_output("[4]", &want), Err(StructuredOutputError::NotObject(_))));
    }

    #[test]
    fn action_then_answer() {
        let (gw, backend, reg) = setup(&[
            "Thought: add.\nAction: calculator\nAction Input: {\"input\": \"2+2\"}",
            "Thought: done.\nAnswer: {\"ans\": \"4\"}",
        ]);
        let result = run_subtask(&gw, &reg, &node(), &StructuredRecord::new(), &ExecutorConfig::default()).unwrap();
        assert!(result.succeeded);
        assert_eq!(result.rounds_used, 2);
        assert_eq!(result.outputs.get("ans"), Some(&json!("4")));
        assert_eq!(result.transcript[0].observation.as_deref(), Some("4"));
        let second = &backend.requests()[1];
        assert_eq!(second.messages.last().unwrap().content, "Observation: 4");
    }

    #[test]
    fn round_cap_exhaustion() {
        let garbage = vec!["no idea"; 25];
        let (gw, backend, reg) = setup(&garbage);
        let result = run_subtask(&gw, &reg, &node(), &StructuredRecord::new(), &ExecutorConfig::default()).unwrap();
        assert!(!result.succeeded);
        assert_eq!(result.rounds_used, 20);
        assert_eq!(backend.remaining(), 5);
        assert_eq!(result.failure, Some(ExecutionFailure::RoundCapExhausted { rounds: 20 }));
        let corrective = backend.requests()[1].messages.last().unwrap().content.clone();
        assert!(corrective.contains("did not follow the required format"));
    }

    #[test]
    fn empty_outputs_accept_empty_object() {
        let (gw, _, reg) = setup(&["Thought: nothing to do.\nAnswer: {}"]);
        let n = PlanNode::new("n", "noop");
        let result = run_subtask(&gw, &reg, &n, &StructuredRecord::new(), &ExecutorConfig::default()).unwrap();
        assert!(result.succeeded);
        assert!(result.outputs.is_empty());
    }

    #[test]
    fn bad_answer_is_structured_failure() {
        let (gw, _, reg) = setup(&["Thought: t\nAnswer: {\"x\": 1}"]);
        let result = run_subtask(&gw, &reg, &node(), &StructuredRecord::new(), &ExecutorConfig::default()).unwrap();
        assert!(!result.succeeded);
        assert!(matches!(result.failure, Some(ExecutionFailure::StructuredOutput(_))));
    }

    #[test]
    fn task_prompt_carries_context_not_global_task() {
        let mut ctx = StructuredRecord::new();
        ctx.insert("x", json!(5));
        let prompt = build_task_prompt(&node(), &ctx);
        assert!(prompt.contains("Add two and two."));
        assert!(prompt.contains("\"x\": 5"));
        assert!(prompt.contains("\"ans\""));
        assert!(!prompt.contains("PREVIOUS_ATTEMPT"));
        ctx.insert(PREVIOUS_ATTEMPT, json!({"outputs": {}, "feedback": "f"}));
        assert!(build_task_prompt(&node(), &ctx).contains("PREVIOUS_ATTEMPT"));
    }

    #[test]
    fn gateway_errors_propagate() {
        let (gw, _, reg) = setup(&[]);
        let err = run_subtask(&gw, &reg, &node(), &StructuredRecord::new(), &ExecutorConfig::default()).unwrap_err();
        assert_eq!(err, GatewayError::ScriptExhausted(Component::Executor));
    }
}
