use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{InputRef, Plan, PREVIOUS_ATTEMPT, USER_TASK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    EmptyId,
    DuplicateId,
    DanglingEdge,
    Cycle,
    UnresolvedInput,
    DuplicateOutput,
    ReservedName,
    NameCollision,
    DuplicateVfName,
    EmptyVfPayload,
    NoFinalNode,
    MultipleFinal,
    /// Warning only: the node has no verification functions.
    EmptyVerification,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("enum serializes");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node_id: Option<String>,
    pub message: String,
}

impl Violation {
    fn new(code: ViolationCode, node_id: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            code,
            node_id: node_id.map(str::to_owned),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node_id {
            Some(id) => write!(f, "{}({id}): {}", self.code, self.message),
            None => write!(f, "{}: {}", self.code, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    /// One violation per line, for feeding back to the planner.
    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Checks every structural rule of a plan and lists all findings.
pub fn validate_plan(plan: &Plan) -> ValidationReport {
    let mut violations = Vec::new();
    let mut warnings = Vec::new();

    let mut seen_ids: HashSet<&str> = HashSet::new();
    for node in &plan.nodes {
        if node.id.trim().is_empty() {
            violations.push(Violation::new(ViolationCode::EmptyId, None, "node id is empty"));
        } else if !seen_ids.insert(node.id.as_str()) {
            violations.push(Violation::new(
                ViolationCode::DuplicateId,
                Some(&node.id),
                format!("node id `{}` is declared more than once", node.id),
            ));
        }
    }

    for (from, to) in &plan.edges {
        for end in [from, to] {
            if !seen_ids.contains(end.as_str()) {
                violations.push(Violation::new(
                    ViolationCode::DanglingEdge,
                    None,
                    format!("edge [{from}, {to}] references unknown node `{end}`"),
                ));
            }
        }
    }

    if let Some(stuck) = cyclic_nodes(plan, &seen_ids) {
        violations.push(Violation::new(
            ViolationCode::Cycle,
            None,
            format!("edges form a cycle among nodes {stuck:?}"),
        ));
    }

    for node in &plan.nodes {
        let mut outputs = HashSet::new();
        for out in &node.outputs {
            if !outputs.insert(out.as_str()) {
                violations.push(Violation::new(
                    ViolationCode::DuplicateOutput,
                    Some(&node.id),
                    format!("output `{out}` declared more than once"),
                ));
            }
            if out == USER_TASK || out == PREVIOUS_ATTEMPT {
                violations.push(Violation::new(
                    ViolationCode::ReservedName,
                    Some(&node.id),
                    format!("output name `{out}` is reserved"),
                ));
            }
        }

        let ancestors = plan.ancestors(&node.id);
        let mut sources: HashMap<&str, &InputRef> = HashMap::new();
        for input in &node.inputs {
            if let InputRef::Node { node_id, var } = input {
                let declared = plan
                    .nodes
                    .iter()
                    .any(|n| n.id == *node_id && n.declares_output(var));
                if *node_id == node.id || !ancestors.contains(node_id) || !declared {
                    let why = if !declared {
                        format!("`{node_id}` does not declare output `{var}`")
                    } else {
                        format!("`{node_id}` is not an upstream node")
                    };
                    violations.push(Violation::new(
                        ViolationCode::UnresolvedInput,
                        Some(&node.id),
                        format!("input {input} cannot be resolved: {why}"),
                    ));
                }
            }
            match sources.get(input.key()) {
                Some(prev) if *prev != input => violations.push(Violation::new(
                    ViolationCode::NameCollision,
                    Some(&node.id),
                    format!("inputs {prev} and {input} both bind `{}`", input.key()),
                )),
                Some(_) => {}
                None => {
                    sources.insert(input.key(), input);
                }
            }
        }

        let mut vf_names = HashSet::new();
        for vf in &node.verification {
            if !vf_names.insert(vf.name.as_str()) {
                violations.push(Violation::new(
                    ViolationCode::DuplicateVfName,
                    Some(&node.id),
                    format!("verification name `{}` is not unique", vf.name),
                ));
            }
            if vf.payload.trim().is_empty() {
                violations.push(Violation::new(
                    ViolationCode::EmptyVfPayload,
                    Some(&node.id),
                    format!("verification `{}` has an empty {}", vf.name, vf.kind.label()),
                ));
            }
        }
        if node.verification.is_empty() {
            warnings.push(Violation::new(
                ViolationCode::EmptyVerification,
                Some(&node.id),
                "node has no verification functions",
            ));
        }
    }

    let marked = plan.nodes.iter().filter(|n| n.final_marker).count();
    if marked > 1 {
        violations.push(Violation::new(
            ViolationCode::MultipleFinal,
            None,
            format!("{marked} nodes are marked final"),
        ));
    } else if plan.final_node_id.is_none() {
        violations.push(Violation::new(
            ViolationCode::NoFinalNode,
            None,
            "no node is marked final and the plan does not have a unique sink",
        ));
    }

    ValidationReport {
        ok: violations.is_empty(),
        violations,
        warnings,
    }
}

/// Kahn's algorithm over edges between known nodes. Returns the nodes left
/// unprocessed when a cycle exists.
fn cyclic_nodes(plan: &Plan, known: &HashSet<&str>) -> Option<Vec<String>> {
    let mut indegree: BTreeMap<&str, usize> = known.iter().map(|id| (*id, 0)).collect();
    let mut succ: HashMap<&str, Vec<&str>> = HashMap::new();
    for (from, to) in &plan.edges {
        if known.contains(from.as_str()) && known.contains(to.as_str()) {
            *indegree.get_mut(to.as_str()).expect("known node") += 1;
            succ.entry(from.as_str()).or_default().push(to.as_str());
        }
    }
    let mut ready: Vec<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut done = 0;
    while let Some(id) = ready.pop() {
        done += 1;
        for next in succ.get(id).into_iter().flatten() {
            let d = indegree.get_mut(next).expect("known node");
            *d -= 1;
            if *d == 0 {
                ready.push(next);
            }
        }
    }
    if done == indegree.len() {
        return None;
    }
    Some(
        indegree
            .into_iter()
            .filter(|(_, d)| *d > 0)
            .map(|(id, _)| id.to_string())
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{PlanNode, VerificationSpec};

    fn edge(a: &str, b: &str) -> (String, String) {
        (a.into(), b.into())
    }

    fn chain() -> Plan {
        Plan::new(
            vec![
                PlanNode::new("n1", "produce x").with_outputs(["x"]),
                PlanNode::new("n2", "use x")
                    .with_inputs([InputRef::node("n1", "x")])
                    .with_outputs(["y"]),
            ],
            vec![edge("n1", "n2")],
        )
    }

    #[test]
    fn valid_chain() {
        let report = validate_plan(&chain());
        assert!(report.ok, "{report:?}");
        // No VFs anywhere: warnings, not violations.
        assert_eq!(report.warnings.len(), 2);
    }

    #[test]
    fn cycle_detected() {
        let mut plan = chain();
        plan.edges.push(edge("n2", "n1"));
        let report = validate_plan(&plan);
        assert!(!report.ok);
        assert!(report.has(ViolationCode::Cycle));
    }

    #[test]
    fn unresolved_input() {
        let mut plan = chain();
        plan.nodes[1].inputs = vec![InputRef::node("n1", "y")];
        let report = validate_plan(&plan);
        assert_eq!(report.codes(), vec![ViolationCode::UnresolvedInput]);
        assert_eq!(report.violations[0].node_id.as_deref(), Some("n2"));
    }

    #[test]
    fn input_from_non_ancestor() {
        let plan = Plan::new(
            vec![
                PlanNode::new("a", "i").with_outputs(["x"]),
                PlanNode::new("b", "i").with_inputs([InputRef::node("a", "x")]),
                PlanNode::new("c", "i"),
            ],
            vec![edge("c", "b")],
        );
        assert!(validate_plan(&plan).has(ViolationCode::UnresolvedInput));
    }

    #[test]
    fn duplicates_and_dangling() {
        let plan = Plan::new(
            vec![
                PlanNode::new("a", "i").with_outputs(["x", "x"]).with_verification([
                    VerificationSpec::executable("t", "assert True"),
                    VerificationSpec::judge("t", " "),
                ]),
                PlanNode::new("a", "i"),
            ],
            vec![edge("a", "ghost")],
        );
        let codes = validate_plan(&plan).codes();
        for code in [
            ViolationCode::DuplicateId,
            ViolationCode::DanglingEdge,
            ViolationCode::DuplicateOutput,
            ViolationCode::DuplicateVfName,
            ViolationCode::EmptyVfPayload,
        ] {
            assert!(codes.contains(&code), "missing {code} in {codes:?}");
        }
    }

    #[test]
    fn cross_parent_collision() {
        let plan = Plan::new(
            vec![
                PlanNode::new("n1", "i").with_outputs(["x"]),
                PlanNode::new("n2", "i").with_outputs(["x"]),
                PlanNode::new("n3", "i")
                    .with_inputs([InputRef::node("n1", "x"), InputRef::node("n2", "x")]),
            ],
            vec![edge("n1", "n3"), edge("n2", "n3")],
        );
        assert_eq!(validate_plan(&plan).codes(), vec![ViolationCode::NameCollision]);
    }

    #[test]
    fn final_node_violations() {
        let plan = Plan::new(vec![PlanNode::new("a", "i"), PlanNode::new("b", "i")], vec![]);
        assert_eq!(validate_plan(&plan).codes(), vec![ViolationCode::NoFinalNode]);

        let mut nodes = vec![PlanNode::new("a", "i"), PlanNode::new("b", "i")];
        nodes.iter_mut().for_each(|n| n.final_marker = true);
        let plan = Plan::new(nodes, vec![]);
        assert_eq!(validate_plan(&plan).codes(), vec![ViolationCode::MultipleFinal]);
    }

    #[test]
    fn reserved_output_names() {
        let plan = Plan::new(
            vec![PlanNode::new("a", "i").with_outputs([PREVIOUS_ATTEMPT])],
            vec![],
        );
        assert_eq!(validate_plan(&plan).codes(), vec![ViolationCode::ReservedName]);
    }
}
