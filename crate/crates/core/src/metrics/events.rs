use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PlanGenerated,
    AttemptStarted,
    ToolCall,
    VfResult,
    Verdict,
    Replanned,
    Outcome,
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub v: u32,
    pub timestamp: String,
    pub run_id: String,
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<String>,
    pub kind: EventKind,
    pub payload: Value,
}

impl TraceEvent {
    pub fn new(
        timestamp: impl Into<String>,
        run_id: impl Into<String>,
        iteration: usize,
        node_id: Option<&str>,
        kind: EventKind,
        payload: Value,
    ) -> Self {
        Self {
            v: TRACE_SCHEMA_VERSION,
            timestamp: timestamp.into(),
            run_id: run_id.into(),
            iteration,
            node_id: node_id.map(str::to_owned),
            kind,
            payload,
        }
    }
}
