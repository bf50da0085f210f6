//! DAG plan model: types, parsing, validation, ordering and input resolution.
//!
//! Plans arrive as bare JSON with `nodes` and `edges` arrays. Each node
//! names its inputs as `<node.var>` references (or `USER_TASK`), declares
//! its output variables and carries a list of verification functions.

mod order;
mod parse;
mod validate;

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub use order::{resolve_input_refs, topological_order};
pub use parse::{parse_plan, ParseError};
pub use validate::{validate_plan, ValidationReport, Violation, ViolationCode};

/// Reference to the raw user task in a node's input list.
pub const USER_TASK: &str = "USER_TASK";

/// Context key carrying the previous attempt's outputs and feedback on retries.
pub const PREVIOUS_ATTEMPT: &str = "PREVIOUS_ATTEMPT";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("plan contains a cycle through nodes {0:?}")]
    Cycle(Vec<String>),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}` needs `{var}` but no upstream value is available")]
    MissingUpstreamValue { node: String, var: String },
    #[error("node `{node}` receives variable `{var}` from more than one source")]
    NameCollision { node: String, var: String },
}

/// Source of one node input.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum InputRef {
    UserTask,
    Node { node_id: String, var: String },
}

impl InputRef {
    pub fn node(node_id: impl Into<String>, var: impl Into<String>) -> Self {
        InputRef::Node {
            node_id: node_id.into(),
            var: var.into(),
        }
    }

    /// Key under which the resolved value appears in the node's context.
    pub fn key(&self) -> &str {
        match self {
            InputRef::UserTask => USER_TASK,
            InputRef::Node { var, .. } => var,
        }
    }

    pub fn source_node(&self) -> Option<&str> {
        match self {
            InputRef::UserTask => None,
            InputRef::Node { node_id, .. } => Some(node_id),
        }
    }
}

impl FromStr for InputRef {
    type Err = String;

    /// Accepts `<node.var>`, `node.var`, `USER_TASK` and `<USER_TASK>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        let inner = trimmed
            .strip_prefix('<')
            .and_then(|t| t.strip_suffix('>'))
            .unwrap_or(trimmed)
            .trim();
        if inner == USER_TASK {
            return Ok(InputRef::UserTask);
        }
        match inner.split_once('.') {
            Some((node, var)) if !node.trim().is_empty() && !var.trim().is_empty() => {
                Ok(InputRef::node(node.trim(), var.trim()))
            }
            _ => Err(format!(
                "input reference `{s}` is neither USER_TASK nor of the form <node.var>"
            )),
        }
    }
}

impl fmt::Display for InputRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputRef::UserTask => f.write_str(USER_TASK),
            InputRef::Node { node_id, var } => write!(f, "<{node_id}.{var}>"),
        }
    }
}

impl Serialize for InputRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InputRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Whether a verification function is executed as code or judged by a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VfKind {
    /// Python assertions run by the sandbox harness (`"type": "python"`).
    #[serde(rename = "python")]
    Executable,
    /// Natural-language criterion evaluated by a judge agent (`"type": "llm"`).
    #[serde(rename = "llm")]
    Judge,
}

impl VfKind {
    /// The literal used in the plan JSON `type` field.
    pub fn type_literal(self) -> &'static str {
        match self {
            VfKind::Executable => "python",
            VfKind::Judge => "llm",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VfKind::Executable => "executable",
            VfKind::Judge => "judge",
        }
    }
}

/// One verification function attached to a plan node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationSpec {
    pub name: String,
    pub kind: VfKind,
    /// Python code for executable checks, criterion prose for judge checks.
    pub payload: String,
}

impl VerificationSpec {
    pub fn executable(name: impl Into<String>, code: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: VfKind::Executable,
            payload: code.into(),
        }
    }

    pub fn judge(name: impl Into<String>, criterion: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: VfKind::Judge,
            payload: criterion.into(),
        }
    }

    pub fn to_json(&self) -> Value {
        let payload_key = match self.kind {
            VfKind::Executable => "code",
            VfKind::Judge => "content",
        };
        json!({
            "name": self.name,
            "type": self.kind.type_literal(),
            payload_key: self.payload,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanNode {
    pub id: String,
    pub name: String,
    pub instruction: String,
    pub inputs: Vec<InputRef>,
    pub outputs: Vec<String>,
    pub verification: Vec<VerificationSpec>,
    /// Set when the node carried `"final": true` in the plan JSON.
    pub final_marker: bool,
}

impl PlanNode {
    pub fn new(id: impl Into<String>, instruction: impl Into<String>) -> Self {
        let id = id.into();
        Self {
            name: id.clone(),
            id,
            instruction: instruction.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            verification: Vec::new(),
            final_marker: false,
        }
    }

    pub fn with_inputs(mut self, inputs: impl IntoIterator<Item = InputRef>) -> Self {
        self.inputs = inputs.into_iter().collect();
        self
    }

    pub fn with_outputs<S: Into<String>>(mut self, outputs: impl IntoIterator<Item = S>) -> Self {
        self.outputs = outputs.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_verification(mut self, specs: impl IntoIterator<Item = VerificationSpec>) -> Self {
        self.verification = specs.into_iter().collect();
        self
    }

    pub fn declares_output(&self, var: &str) -> bool {
        self.outputs.iter().any(|o| o == var)
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("id".into(), json!(self.id));
        obj.insert("name".into(), json!(self.name));
        obj.insert("instruction".into(), json!(self.instruction));
        obj.insert(
            "input".into(),
            Value::Array(self.inputs.iter().map(|i| json!(i.to_string())).collect()),
        );
        obj.insert("output".into(), json!(self.outputs));
        obj.insert(
            "verification".into(),
            Value::Array(self.verification.iter().map(VerificationSpec::to_json).collect()),
        );
        if self.final_marker {
            obj.insert("final".into(), Value::Bool(true));
        }
        Value::Object(obj)
    }
}

/// A task plan: nodes, dependency edges and the designated final node.
///
/// Plans are immutable once parsed and can be shared freely between runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub nodes: Vec<PlanNode>,
    pub edges: Vec<(String, String)>,
    /// Resolved final node; `None` when no unique final node exists, which
    /// validation reports.
    pub final_node_id: Option<String>,
}

impl Plan {
    /// Builds a plan and resolves its final node.
    pub fn new(nodes: Vec<PlanNode>, edges: Vec<(String, String)>) -> Self {
        let final_node_id = resolve_final_node(&nodes, &edges);
        Self {
            nodes,
            edges,
            final_node_id,
        }
    }

    pub fn node(&self, id: &str) -> Option<&PlanNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.node(id).is_some()
    }

    /// Direct edge predecessors of `id`, in edge-declaration order.
    pub fn parents(&self, id: &str) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.edges
            .iter()
            .filter(|(_, to)| to == id)
            .map(|(from, _)| from.as_str())
            .filter(|from| seen.insert(*from))
            .collect()
    }

    /// Ancestors of `id` with their graph distance, nearest first.
    ///
    /// `max_depth` bounds the distance; `None` walks the full ancestry.
    pub fn ancestors_within(&self, id: &str, max_depth: Option<usize>) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        let mut seen: HashSet<&str> = HashSet::from([id]);
        let mut queue = VecDeque::from([(id, 0usize)]);
        while let Some((current, depth)) = queue.pop_front() {
            if max_depth.is_some_and(|m| depth >= m) {
                continue;
            }
            for parent in self.parents(current) {
                if seen.insert(parent) {
                    out.push((parent.to_string(), depth + 1));
                    queue.push_back((parent, depth + 1));
                }
            }
        }
        out
    }

    pub fn ancestors(&self, id: &str) -> HashSet<String> {
        self.ancestors_within(id, None)
            .into_iter()
            .map(|(a, _)| a)
            .collect()
    }

    pub fn final_node(&self) -> Option<&PlanNode> {
        self.final_node_id.as_deref().and_then(|id| self.node(id))
    }

    pub fn to_json(&self) -> Value {
        json!({
            "nodes": self.nodes.iter().map(PlanNode::to_json).collect::<Vec<_>>(),
            "edges": self.edges.iter().map(|(a, b)| json!([a, b])).collect::<Vec<_>>(),
        })
    }

    /// Pretty JSON in the planner's output schema.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("plan JSON always serializes")
    }

    pub fn vf_count(&self) -> usize {
        self.nodes.iter().map(|n| n.verification.len()).sum()
    }
}

/// Explicit `"final": true` marker wins; otherwise the unique sink.
fn resolve_final_node(nodes: &[PlanNode], edges: &[(String, String)]) -> Option<String> {
    let marked: Vec<&PlanNode> = nodes.iter().filter(|n| n.final_marker).collect();
    match marked.len() {
        1 => return Some(marked[0].id.clone()),
        0 => {}
        _ => return None,
    }
    let mut sinks = nodes
        .iter()
        .filter(|n| !edges.iter().any(|(from, _)| *from == n.id));
    match (sinks.next(), sinks.next()) {
        (Some(only), None) => Some(only.id.clone()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_ref_forms() {
        assert_eq!("USER_TASK".parse::<InputRef>().unwrap(), InputRef::UserTask);
        assert_eq!("<USER_TASK>".parse::<InputRef>().unwrap(), InputRef::UserTask);
        assert_eq!(
            "<n1.x>".parse::<InputRef>().unwrap(),
            InputRef::node("n1", "x")
        );
        assert_eq!(
            "n1.answer_text".parse::<InputRef>().unwrap(),
            InputRef::node("n1", "answer_text")
        );
        assert!("<n1>".parse::<InputRef>().is_err());
        assert!("<.x>".parse::<InputRef>().is_err());
        assert_eq!(InputRef::node("a", "b").to_string(), "<a.b>");
        assert_eq!(InputRef::UserTask.source_node(), None);
    }

    #[test]
    fn final_node_resolution() {
        let nodes = vec![PlanNode::new("a", "x"), PlanNode::new("b", "y")];
        let edges = vec![("a".to_string(), "b".to_string())];
        assert_eq!(Plan::new(nodes.clone(), edges.clone()).final_node_id.as_deref(), Some("b"));

        // Two sinks, no marker.
        assert_eq!(Plan::new(nodes.clone(), vec![]).final_node_id, None);

        let mut marked = nodes.clone();
        marked[0].final_marker = true;
        assert_eq!(Plan::new(marked, vec![]).final_node_id.as_deref(), Some("a"));
    }

    #[test]
    fn ancestors_respect_depth() {
        let nodes = ["a", "b", "c", "d"].map(|id| PlanNode::new(id, "x")).to_vec();
        let edges = vec![
            ("a".into(), "b".into()),
            ("b".into(), "c".into()),
            ("c".into(), "d".into()),
        ];
        let plan = Plan::new(nodes, edges);
        let near: Vec<_> = plan.ancestors_within("d", Some(2));
        assert_eq!(near, vec![("c".to_string(), 1), ("b".to_string(), 2)]);
        assert_eq!(plan.ancestors("d").len(), 3);
    }
}
