use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use serde_json::Value;

use super::{InputRef, Plan, PlanError};
use crate::record::StructuredRecord;

/// Deterministic topological order of the plan's nodes.
///
/// Among nodes whose predecessors are all placed, the one declared first in
/// the plan goes next.
pub fn topological_order(plan: &Plan) -> Result<Vec<String>, PlanError> {
    let index: HashMap<&str, usize> = plan
        .nodes
        .iter()
        .enumerate()
        .rev()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut indegree = vec![0usize; plan.nodes.len()];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); plan.nodes.len()];
    for (from, to) in &plan.edges {
        let f = *index
            .get(from.as_str())
            .ok_or_else(|| PlanError::UnknownNode(from.clone()))?;
        let t = *index
            .get(to.as_str())
            .ok_or_else(|| PlanError::UnknownNode(to.clone()))?;
        indegree[t] += 1;
        succ[f].push(t);
    }

    let mut ready: BinaryHeap<Reverse<usize>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, d)| **d == 0)
        .map(|(i, _)| Reverse(i))
        .collect();
    let mut order = Vec::with_capacity(plan.nodes.len());
    while let Some(Reverse(i)) = ready.pop() {
        order.push(plan.nodes[i].id.clone());
        for &t in &succ[i] {
            indegree[t] -= 1;
            if indegree[t] == 0 {
                ready.push(Reverse(t));
            }
        }
    }
    if order.len() != plan.nodes.len() {
        let stuck = indegree
            .iter()
            .enumerate()
            .filter(|(_, d)| **d > 0)
            .map(|(i, _)| plan.nodes[i].id.clone())
            .collect();
        return Err(PlanError::Cycle(stuck));
    }
    Ok(order)
}

/// Collects the values a node references into one record keyed by variable
/// name. `USER_TASK` resolves to the raw task text.
pub fn resolve_input_refs(
    plan: &Plan,
    node_id: &str,
    blackboard: &HashMap<String, StructuredRecord>,
    user_task: &str,
) -> Result<StructuredRecord, PlanError> {
    let node = plan
        .node(node_id)
        .ok_or_else(|| PlanError::UnknownNode(node_id.to_string()))?;
    let mut record = StructuredRecord::new();
    let mut bound: HashMap<&str, &InputRef> = HashMap::new();
    for input in &node.inputs {
        match bound.get(input.key()) {
            Some(prev) if *prev == input => continue,
            Some(_) => {
                return Err(PlanError::NameCollision {
                    node: node_id.to_string(),
                    var: input.key().to_string(),
                })
            }
            None => {
                bound.insert(input.key(), input);
            }
        }
        let value = match input {
            InputRef::UserTask => Value::String(user_task.to_string()),
            InputRef::Node { node_id: src, var } => blackboard
                .get(src)
                .and_then(|rec| rec.get(var))
                .cloned()
                .ok_or_else(|| PlanError::MissingUpstreamValue {
                    node: node_id.to_string(),
                    var: input.to_string(),
                })?,
        };
        record.insert(input.key(), value);
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::PlanNode;
    use serde_json::json;

    fn plan(ids: &[&str], edges: &[(&str, &str)]) -> Plan {
        Plan::new(
            ids.iter().map(|id| PlanNode::new(*id, "i")).collect(),
            edges
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        )
    }

    #[test]
    fn declaration_order_tie_break() {
        let p = plan(&["a", "b", "c"], &[("a", "c"), ("b", "c")]);
        assert_eq!(topological_order(&p).unwrap(), ["a", "b", "c"]);
        let p = plan(&["c", "b", "a"], &[("a", "c"), ("b", "c")]);
        assert_eq!(topological_order(&p).unwrap(), ["b", "a", "c"]);
    }

    #[test]
    fn single_and_diamond() {
        assert_eq!(topological_order(&plan(&["x"], &[])).unwrap(), ["x"]);
        let p = plan(
            &["a", "b", "c", "d"],
            &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")],
        );
        assert_eq!(topological_order(&p).unwrap(), ["a", "b", "c", "d"]);
    }

    #[test]
    fn cycle_and_unknown() {
        let p = plan(&["a", "b"], &[("a", "b"), ("b", "a")]);
        assert!(matches!(topological_order(&p), Err(PlanError::Cycle(_))));
        let p = plan(&["a"], &[("a", "zz")]);
        assert_eq!(
            topological_order(&p),
            Err(PlanError::UnknownNode("zz".into()))
        );
    }

    fn board(entries: &[(&str, serde_json::Value)]) -> HashMap<String, StructuredRecord> {
        entries
            .iter()
            .map(|(id, v)| {
                let rec: StructuredRecord = v.as_object().unwrap().clone().into();
                (id.to_string(), rec)
            })
            .collect()
    }

    #[test]
    fn resolves_refs() {
        let p = Plan::new(
            vec![
                PlanNode::new("n1", "i").with_outputs(["x", "unused"]),
                PlanNode::new("n2", "i").with_inputs([InputRef::node("n1", "x")]),
                PlanNode::new("n3", "i").with_inputs([InputRef::UserTask]),
            ],
            vec![("n1".into(), "n2".into())],
        );
        let bb = board(&[("n1", json!({"x": 5, "unused": 1}))]);
        let rec = resolve_input_refs(&p, "n2", &bb, "Q?").unwrap();
        assert_eq!(rec.to_value(), json!({"x": 5}));
        let rec = resolve_input_refs(&p, "n3", &bb, "Q?").unwrap();
        assert_eq!(rec.to_value(), json!({"USER_TASK": "Q?"}));
    }

    #[test]
    fn collision_and_missing() {
        let p = Plan::new(
            vec![
                PlanNode::new("n1", "i").with_outputs(["x"]),
                PlanNode::new("n2", "i").with_outputs(["x"]),
                PlanNode::new("n3", "i")
                    .with_inputs([InputRef::node("n1", "x"), InputRef::node("n2", "x")]),
                PlanNode::new("n4", "i").with_inputs([InputRef::node("n1", "x")]),
            ],
            vec![],
        );
        let bb = board(&[("n1", json!({"x": 1})), ("n2", json!({"x": 2}))]);
        assert_eq!(
            resolve_input_refs(&p, "n3", &bb, ""),
            Err(PlanError::NameCollision {
                node: "n3".into(),
                var: "x".into()
            })
        );
        assert!(matches!(
            resolve_input_refs(&p, "n4", &HashMap::new(), ""),
            Err(PlanError::MissingUpstreamValue { .. })
        ));
    }
}
