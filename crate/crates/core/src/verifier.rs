//! Verification of node outputs.
//!
//! Every verification function of a node runs, in declaration order, even
//! after one fails, so retries see the complete feedback. A node passes only
//! if all of them pass.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::executor::{parse_react_step, AgentLoop, ReactStep, StepKind};
use crate::gateway::{ChatRequest, Component, Gateway, GatewayError, Message, TokenUsage};
use crate::harness::{HarnessError, HarnessRequest, SharedHarness};
use crate::plan::{PlanNode, VerificationSpec, VfKind};
use crate::prompts;
use crate::record::StructuredRecord;
use crate::text::strip_code_fence;
use crate::tools::ToolRegistry;

pub const DEFAULT_JUDGE_ROUND_CAP: usize = 10;
pub const DEFAULT_VF_TIMEOUT_S: u64 = 10;
pub const UNPARSEABLE_FEEDBACK: &str = "verifier output unparseable";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub model_id: String,
    pub judge_round_cap: usize,
    pub vf_timeout_s: u64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            model_id: "gpt-4o-mini".to_string(),
            judge_round_cap: DEFAULT_JUDGE_ROUND_CAP,
            vf_timeout_s: DEFAULT_VF_TIMEOUT_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VfResult {
    pub vf_name: String,
    pub kind: VfKind,
    pub passed: bool,
    /// Traceback for executable checks, reasoning for judge checks.
    pub feedback: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    /// Length of the check's code or criterion, in characters.
    #[serde(default)]
    pub payload_chars: usize,
}

impl VfResult {
    pub fn pass(spec: &VerificationSpec, feedback: impl Into<String>) -> Self {
        Self::build(spec, true, feedback.into())
    }

    pub fn fail(spec: &VerificationSpec, feedback: impl Into<String>) -> Self {
        let mut feedback: String = feedback.into();
        if feedback.trim().is_empty() {
            feedback = "check failed without details".to_string();
        }
        Self::build(spec, false, feedback)
    }

    fn build(spec: &VerificationSpec, passed: bool, feedback: String) -> Self {
        Self {
            vf_name: spec.name.clone(),
            kind: spec.kind,
            passed,
            feedback,
            usage: None,
            payload_chars: spec.payload.chars().count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub results: Vec<VfResult>,
    pub passed: bool,
    pub feedback_bundle: String,
    /// Set when verification never ran because execution itself failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precondition_failure: Option<String>,
}

impl VerdictReport {
    pub fn from_results(results: Vec<VfResult>) -> Self {
        let (passed, feedback_bundle) = aggregate_verdicts(&results);
        Self {
            results,
            passed,
            feedback_bundle,
            precondition_failure: None,
        }
    }

    /// A failed verdict for an attempt whose execution produced no outputs.
    pub fn precondition_failed(reason: impl Into<String>) -> Self {
        let reason = reason.into();
        Self {
            results: Vec::new(),
            passed: false,
            feedback_bundle: reason.clone(),
            precondition_failure: Some(reason),
        }
    }

    pub fn failed_names(&self) -> Vec<&str> {
        self.results
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.vf_name.as_str())
            .collect()
    }
}

/// Strict AND over `results`; the bundle lists each failure as
/// `[name] feedback`, separated by blank lines, in input order.
pub fn aggregate_verdicts(results: &[VfResult]) -> (bool, String) {
    let passed = results.iter().all(|r| r.passed);
    let bundle = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("[{}] {}", r.vf_name, r.feedback))
        .collect::<Vec<_>>()
        .join("\n\n");
    (passed, bundle)
}

pub fn run_executable_vf(
    harness: &SharedHarness,
    spec: &VerificationSpec,
    inputs: &StructuredRecord,
    outputs: &StructuredRecord,
    timeout_s: u64,
) -> Result<VfResult, HarnessError> {
    let request = HarnessRequest::vf(spec.payload.clone(), inputs.to_value(), outputs.to_value(), timeout_s);
    let response = harness.evaluate(&request)?;
    Ok(if response.passed {
        VfResult::pass(spec, "")
    } else {
        VfResult::fail(spec, response.failure_text())
    })
}

/// Text describing the executor's assignment, shown to the judge.
pub fn judge_agent_input(node: &PlanNode, inputs: &StructuredRecord) -> String {
    format!(
        "Task: {}\nInstructions: {}\nContexts: {}",
        node.name,
        node.instruction,
        inputs.to_json()
    )
}

pub fn build_judge_prompt(spec: &VerificationSpec, agent_input: &str, output: &StructuredRecord) -> String {
    prompts::render(
        prompts::VERIFIER,
        &[
            ("agent_input", agent_input),
            ("verify_prompt", &spec.payload),
            ("agent_output", &output.to_json_pretty()),
        ],
    )
}

/// Reads `{"success_score": 0|1, "reasoning": "..."}` from a judge reply.
pub fn parse_judge_verdict(text: &str) -> Result<(bool, String), String> {
    let step = parse_react_step(text);
    let body = match (&step.kind, &step.answer) {
        (StepKind::FinalAnswer, Some(answer)) => answer.as_str(),
        _ => text,
    };
    let body = strip_code_fence(body.trim());
    let value: Value = serde_json::from_str(body)
        .or_else(|err| {
            // Tolerate prose around a single JSON object.
            match (body.find('{'), body.rfind('}')) {
                (Some(a), Some(b)) if a < b => serde_json::from_str(&body[a..=b]),
                _ => Err(err),
            }
        })
        .map_err(|e| format!("not a JSON object: {e}"))?;
    let score = value
        .get("success_score")
        .ok_or("missing success_score")?;
    let passed = match score.as_f64() {
        Some(1.0) => true,
        Some(0.0) => false,
        _ => return Err(format!("success_score must be 0 or 1, got {score}")),
    };
    let reasoning = match value.get("reasoning") {
        Some(Value::String(s)) => s.clone(),
        None | Some(Value::Null) => String::new(),
        Some(other) => other.to_string(),
    };
    Ok((passed, reasoning))
}

fn judge_interpret(text: &str) -> ReactStep {
    let step = parse_react_step(text);
    match step.kind {
        StepKind::Action | StepKind::FinalAnswer => step,
        // Anything that is not a tool call is taken as the verdict.
        StepKind::Malformed => ReactStep::final_answer(step.thought, text.trim()),
    }
}

/// Judges `output` against a natural-language criterion with a tool-using
/// agent. An unparseable verdict earns one corrective re-ask.
pub fn run_judge_vf(
    gateway: &Gateway,
    registry: &ToolRegistry,
    spec: &VerificationSpec,
    agent_input: &str,
    output: &StructuredRecord,
    cfg: &VerifierConfig,
) -> Result<VfResult, GatewayError> {
    let calls_before = gateway.calls().len();
    let agent = AgentLoop {
        gateway,
        registry,
        component: Component::Verifier,
        model_id: &cfg.model_id,
        round_cap: cfg.judge_round_cap,
        answer_hint: "Your Answer must be the JSON verdict object.".to_string(),
    };
    let system = crate::executor::build_system_prompt(registry);
    let outcome = agent.run(system, build_judge_prompt(spec, agent_input, output), judge_interpret)?;

    let mut result = match outcome.answer {
        None => VfResult::fail(
            spec,
            format!(
                "verifier reached the round cap of {} without a verdict",
                outcome.rounds_used
            ),
        ),
        Some(answer) => match parse_judge_verdict(&answer) {
            Ok(verdict) => verdict_result(spec, verdict),
            Err(problem) => {
                let mut messages = outcome.messages;
                messages.push(Message::user(format!(
                    "Your verdict could not be parsed ({problem}). Reply with only the JSON object \
                     {{\"success_score\": <0 or 1>, \"reasoning\": \"...\"}} and nothing else."
                )));
                let request = ChatRequest::new(Component::Verifier, &cfg.model_id, messages);
                let retry = gateway.complete(&request)?;
                match parse_judge_verdict(&retry.content) {
                    Ok(verdict) => verdict_result(spec, verdict),
                    Err(_) => VfResult::fail(spec, UNPARSEABLE_FEEDBACK),
                }
            }
        },
    };
    let usage: TokenUsage = gateway.calls()[calls_before..].iter().map(|c| c.usage).sum();
    result.usage = Some(usage);
    Ok(result)
}

fn verdict_result(spec: &VerificationSpec, (passed, reasoning): (bool, String)) -> VfResult {
    if passed {
        VfResult::pass(spec, reasoning)
    } else if reasoning.trim().is_empty() {
        VfResult::fail(spec, "judge reported failure without reasoning")
    } else {
        VfResult::fail(spec, reasoning)
    }
}

/// What verification needs besides the node and its data.
pub struct VerifierDeps<'a> {
    pub gateway: &'a Gateway,
    pub registry: &'a ToolRegistry,
    pub harness: &'a SharedHarness,
    pub cfg: &'a VerifierConfig,
}

/// Runs every check of `node` and aggregates the results.
pub fn verify_node(
    deps: &VerifierDeps<'_>,
    node: &PlanNode,
    inputs: &StructuredRecord,
    outputs: &StructuredRecord,
) -> Result<VerdictReport, VerifyError> {
    let agent_input = judge_agent_input(node, inputs);
    let mut results = Vec::with_capacity(node.verification.len());
    for spec in &node.verification {
        let result = match spec.kind {
            VfKind::Executable => run_executable_vf(deps.harness, spec, inputs, outputs, deps.cfg.vf_timeout_s)?,
            VfKind::Judge => run_judge_vf(deps.gateway, deps.registry, spec, &agent_input, outputs, deps.cfg)?,
        };
        results.push(result);
    }
    Ok(VerdictReport::from_results(results))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gateway::ScriptedBackend;
    use crate::harness::BuiltinHarness;
    use serde_json::json;

    fn record(v: Value) -> StructuredRecord {
        match v {
            Value::Object(map) => StructuredRecord::from(map),
            _ => unreachable!(),
        }
    }

    fn judge_setup(script: &[&str]) -> (Gateway, Arc<ScriptedBackend>) {
        let backend = Arc::new(ScriptedBackend::new());
        backend.enqueue(script.iter().copied());
        (Gateway::new(backend.clone()), backend)
    }

    fn judge(script: &[&str]) -> (VfResult, Arc<ScriptedBackend>) {
        let (gw, backend) = judge_setup(script);
        let spec = VerificationSpec::judge("unit_check", "The answer states a unit.");
        let result = run_judge_vf(
            &gw,
            &ToolRegistry::new(),
            &spec,
            "Task: t",
            &record(json!({"ans": "4 m"})),
            &VerifierConfig::default(),
        )
        .unwrap();
        (result, backend)
    }

    #[test]
    fn aggregation_basics() {
        let spec_a = VerificationSpec::executable("a", "x");
        let spec_b = VerificationSpec::executable("b", "x");
        assert_eq!(aggregate_verdicts(&[]), (true, String::new()));
        let (passed, bundle) = aggregate_verdicts(&[VfResult::pass(&spec_a, ""), VfResult::fail(&spec_b, "x broke")]);
        assert!(!passed);
        assert_eq!(bundle, "[b] x broke");
        let (_, bundle) = aggregate_verdicts(&[VfResult::fail(&spec_a, "one"), VfResult::fail(&spec_b, "two")]);
        assert_eq!(bundle, "[a] one\n\n[b] two");
    }

    #[test]
    fn executable_checks_via_builtin() {
        let harness: SharedHarness = Arc::new(BuiltinHarness);
        let spec = VerificationSpec::executable("is_four", r#"assert outputs["ans"] == 4"#);
        let inputs = StructuredRecord::new();
        let ok = run_executable_vf(&harness, &spec, &inputs, &record(json!({"ans": 4})), 5).unwrap();
        assert!(ok.passed);
        let bad = run_executable_vf(&harness, &spec, &inputs, &record(json!({"ans": 5})), 5).unwrap();
        assert!(!bad.passed && bad.feedback.contains("AssertionError"));
        let missing = run_executable_vf(&harness, &spec, &inputs, &record(json!({})), 5).unwrap();
        assert!(missing.feedback.contains("KeyError"));
    }

    #[test]
    fn judge_pass_and_fail() {
        let (ok, _) = judge(&[r#"{"success_score":1,"reasoning":"ok"}"#]);
        assert!(ok.passed);
        assert!(ok.usage.is_some());
        let (bad, _) = judge(&[r#"{"success_score":0,"reasoning":"missing unit"}"#]);
        assert!(!bad.passed);
        assert_eq!(bad.feedback, "missing unit");
    }

    #[test]
    fn judge_reask_then_give_up() {
        let (reasked, backend) = judge(&["Looks fine to me.", r#"{"success_score":1,"reasoning":"ok"}"#]);
        assert!(reasked.passed);
        assert_eq!(backend.requests().len(), 2);
        let (gave_up, _) = judge(&["Looks fine.", "Still prose."]);
        assert!(!gave_up.passed);
        assert_eq!(gave_up.feedback, UNPARSEABLE_FEEDBACK);
        let (bad_score, _) = judge(&[r#"{"success_score":0.5,"reasoning":"x"}"#, r#"{"success_score":2}"#]);
        assert_eq!(bad_score.feedback, UNPARSEABLE_FEEDBACK);
    }

    #[test]
    fn judge_may_use_tools_and_answer_block() {
        let (gw, backend) = judge_setup(&[
            "Thought: check.\nAction: calculator\nAction Input: {\"input\": \"2+2\"}",
            "Thought: verified.\nAnswer: {\"success_score\": 1, \"reasoning\": \"2+2 is 4\"}",
        ]);
        let mut reg = ToolRegistry::new();
        reg.register(crate::tools::calculator_tool()).unwrap();
        let spec = VerificationSpec::judge("math", "Check the arithmetic.");
        let result = run_judge_vf(&gw, &reg, &spec, "Task", &record(json!({"ans": 4})), &VerifierConfig::default()).unwrap();
        assert!(result.passed);
        assert_eq!(backend.requests()[1].messages.last().unwrap().content, "Observation: 4");
        assert!(backend.requests()[0].messages[1].content.contains("Check the arithmetic."));
    }

    #[test]
    fn verify_node_runs_all_in_order() {
        let (gw, _) = judge_setup(&[r#"{"success_score":0,"reasoning":"judge says no"}"#]);
        let harness: SharedHarness = Arc::new(BuiltinHarness);
        let cfg = VerifierConfig::default();
        let registry = ToolRegistry::new();
        let deps = VerifierDeps {
            gateway: &gw,
            registry: &registry,
            harness: &harness,
            cfg: &cfg,
        };
        let node = PlanNode::new("n", "do").with_outputs(["ans"]).with_verification([
            VerificationSpec::executable("first", "assert outputs['ans'] == 4"),
            VerificationSpec::executable("second", "assert outputs['ans'] > 100"),
            VerificationSpec::judge("third", "criterion"),
        ]);
        let report = verify_node(&deps, &node, &StructuredRecord::new(), &record(json!({"ans": 4}))).unwrap();
        assert!(!report.passed);
        assert_eq!(report.results.len(), 3);
        assert_eq!(report.failed_names(), vec!["second", "third"]);
        assert!(report.feedback_bundle.starts_with("[second] "));
        let empty = verify_node(&deps, &PlanNode::new("m", "x"), &StructuredRecord::new(), &StructuredRecord::new()).unwrap();
        assert!(empty.passed);
    }
}
