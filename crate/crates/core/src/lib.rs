//! Verification-aware multi-agent planning.
//!
//! A planner model decomposes a task into a DAG of subtasks, each carrying
//! its own verification functions. The coordinator walks the DAG in
//! topological order, runs every subtask through a ReAct executor, checks
//! the structured output with the node's verifiers, retries failed nodes
//! and replans when retries run out.
//!
//! Model access goes through [`gateway::Gateway`], which can be backed by
//! an OpenAI-compatible HTTP endpoint or by a deterministic scripted
//! backend for offline runs and tests.

pub mod coordinator;
pub mod executor;
pub mod gateway;
pub mod harness;
pub mod metrics;
pub mod plan;
pub mod planner;
pub mod prompts;
pub mod record;
pub(crate) mod text;
pub mod tools;
pub mod verifier;

pub use coordinator::{
    run_task, CoordinatorConfig, EngineError, NodeAttempt, RunContext, TaskOutcome, TaskStatus,
    TaskTrace,
};
pub use gateway::{
    cost_of, Backend, ChatRequest, ChatResponse, Component, Gateway, GatewayError, PriceTable,
    TokenUsage,
};
pub use plan::{parse_plan, topological_order, validate_plan, Plan, PlanNode, ValidationReport};
pub use planner::{generate_plan, FailureContext, PlannerConfig};
pub use record::StructuredRecord;
pub use tools::{ToolRegistry, ToolResult};
