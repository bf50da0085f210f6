use serde_json::{Map, Value};
use thiserror::Error;

use super::{InputRef, Plan, PlanNode, VerificationSpec, VfKind};
use crate::text::{byte_offset, strip_code_fence};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error("missing required field `{path}`")]
    MissingField { path: String },
    #[error("field `{path}` has the wrong type: expected {expected}")]
    WrongType { path: String, expected: &'static str },
    #[error("invalid value at `{path}`: {message}")]
    InvalidValue { path: String, message: String },
}

impl ParseError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ParseError::InvalidValue {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Parses a planner completion into a [`Plan`].
///
/// Surrounding whitespace and one markdown code fence are tolerated.
/// Unknown fields are ignored. Structural checks beyond the schema (cycles,
/// dangling edges, unresolved inputs) are left to
/// [`validate_plan`](super::validate_plan).
pub fn parse_plan(json_text: &str) -> Result<Plan, ParseError> {
    let body = strip_code_fence(json_text);
    let root: Value = serde_json::from_str(body).map_err(|e| ParseError::Json {
        offset: byte_offset(body, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let root = root.as_object().ok_or(ParseError::WrongType {
        path: "$".into(),
        expected: "object",
    })?;

    let nodes = required(root, "nodes", "nodes")?
        .as_array()
        .ok_or(ParseError::WrongType {
            path: "nodes".into(),
            expected: "array",
        })?;
    let edges = required(root, "edges", "edges")?
        .as_array()
        .ok_or(ParseError::WrongType {
            path: "edges".into(),
            expected: "array",
        })?;
    if nodes.is_empty() {
        return Err(ParseError::invalid("nodes", "plan has no nodes"));
    }

    let nodes = nodes
        .iter()
        .enumerate()
        .map(|(i, v)| parse_node(v, &format!("nodes[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let edges = edges
        .iter()
        .enumerate()
        .map(|(i, v)| parse_edge(v, &format!("edges[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Plan::new(nodes, edges))
}

fn required<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value, ParseError> {
    obj.get(key).ok_or_else(|| ParseError::MissingField { path: path.into() })
}

fn string_field(obj: &Map<String, Value>, key: &str, path: &str) -> Result<String, ParseError> {
    let path = format!("{path}.{key}");
    match obj.get(key) {
        None => Err(ParseError::MissingField { path }),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ParseError::WrongType {
            path,
            expected: "string",
        }),
    }
}

fn string_list(obj: &Map<String, Value>, key: &str, path: &str) -> Result<Vec<String>, ParseError> {
    let path = format!("{path}.{key}");
    let Some(value) = obj.get(key) else {
        return Ok(Vec::new());
    };
    let items = match value {
        Value::Null => return Ok(Vec::new()),
        Value::Array(items) => items,
        _ => {
            return Err(ParseError::WrongType {
                path,
                expected: "array of strings",
            })
        }
    };
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            item.as_str().map(str::to_owned).ok_or(ParseError::WrongType {
                path: format!("{path}[{i}]"),
                expected: "string",
            })
        })
        .collect()
}

fn parse_node(value: &Value, path: &str) -> Result<PlanNode, ParseError> {
    let obj = value.as_object().ok_or(ParseError::WrongType {
        path: path.into(),
        expected: "object",
    })?;
    let id = string_field(obj, "id", path)?;
    let name = string_field(obj, "name", path)?;
    let instruction = string_field(obj, "instruction", path)?;
    if !obj.contains_key("output") {
        return Err(ParseError::MissingField {
            path: format!("{path}.output"),
        });
    }
    let outputs = string_list(obj, "output", path)?;
    let inputs = string_list(obj, "input", path)?
        .iter()
        .enumerate()
        .map(|(i, raw)| {
            raw.parse::<InputRef>()
                .map_err(|msg| ParseError::invalid(format!("{path}.input[{i}]"), msg))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let verification = match obj.get("verification") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| parse_vf(v, &format!("{path}.verification[{i}]")))
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => {
            return Err(ParseError::WrongType {
                path: format!("{path}.verification"),
                expected: "array",
            })
        }
    };

    let final_marker = match obj.get("final") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => {
            return Err(ParseError::WrongType {
                path: format!("{path}.final"),
                expected: "boolean",
            })
        }
    };

    Ok(PlanNode {
        id,
        name,
        instruction,
        inputs,
        outputs,
        verification,
        final_marker,
    })
}

fn parse_vf(value: &Value, path: &str) -> Result<VerificationSpec, ParseError> {
    let obj = value.as_object().ok_or(ParseError::WrongType {
        path: path.into(),
        expected: "object",
    })?;
    let name = string_field(obj, "name", path)?;
    let kind_literal = string_field(obj, "type", path)?;
    let (kind, payload_key) = match kind_literal.as_str() {
        "python" => (VfKind::Executable, "code"),
        "llm" => (VfKind::Judge, "content"),
        other => {
            return Err(ParseError::invalid(
                format!("{path}.type"),
                format!("expected \"python\" or \"llm\", found {other:?}"),
            ))
        }
    };
    let payload = string_field(obj, payload_key, path)?;
    Ok(VerificationSpec {
        name,
        kind,
        payload,
    })
}

fn parse_edge(value: &Value, path: &str) -> Result<(String, String), ParseError> {
    let wrong = || ParseError::WrongType {
        path: path.into(),
        expected: "array of two node id strings",
    };
    match value.as_array().map(Vec::as_slice) {
        Some([Value::String(from), Value::String(to)]) => Ok((from.clone(), to.clone())),
        _ => Err(wrong()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_node_plan() {
        let plan = parse_plan(
            r#"{"nodes":[{"id":"n1","name":"solve","instruction":"...","input":[],"output":["ans"],"verification":[]}],"edges":[]}"#,
        )
        .unwrap();
        assert_eq!(plan.nodes.len(), 1);
        assert_eq!(plan.final_node_id.as_deref(), Some("n1"));
    }

    #[test]
    fn planner_prompt_skeleton() {
        let text = r#"
        {
          "nodes": [
            {
              "id": "node_id",
              "name": "subtask name",
              "instruction": "detailed and context-aware instruction for the agent",
              "input": ["USER_TASK"],
              "output": ["x"]
            },
            {
              "id": "to_node_id",
              "name": "next",
              "instruction": "use x",
              "input": ["<node_id.x>"],
              "output": ["y"],
              "verification": [
                {"name": "test_next_int", "type": "python", "code": "assert isinstance(outputs['y'], int)"},
                {"name": "test_next_judge", "type": "llm", "content": "Ensure y is sensible"}
              ]
            }
          ],
          "edges": [
            ["node_id", "to_node_id"]
          ]
        }
        "#;
        let plan = parse_plan(text).unwrap();
        assert_eq!(plan.edges, vec![("node_id".to_string(), "to_node_id".to_string())]);
        assert_eq!(plan.nodes[1].verification[0].kind, VfKind::Executable);
        assert_eq!(plan.nodes[1].verification[1].kind, VfKind::Judge);
        assert_eq!(plan.nodes[1].inputs, vec![InputRef::node("node_id", "x")]);
        assert_eq!(plan.final_node_id.as_deref(), Some("to_node_id"));
    }

    #[test]
    fn missing_edges_is_error() {
        assert_eq!(
            parse_plan(r#"{"nodes": []}"#),
            Err(ParseError::MissingField {
                path: "edges".into()
            })
        );
        assert!(matches!(
            parse_plan(r#"{"nodes": [], "edges": []}"#),
            Err(ParseError::InvalidValue { .. })
        ));
    }

    #[test]
    fn malformed_json_reports_offset() {
        let err = parse_plan("{\"nodes\": [,]}").unwrap_err();
        match err {
            ParseError::Json { offset, .. } => assert_eq!(offset, 11),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn field_paths_in_errors() {
        let err = parse_plan(r#"{"nodes":[{"id":"a","name":"n","output":[]}],"edges":[]}"#).unwrap_err();
        assert_eq!(
            err,
            ParseError::MissingField {
                path: "nodes[0].instruction".into()
            }
        );
        let err = parse_plan(
            r#"{"nodes":[{"id":"a","name":"n","instruction":"i","output":[1]}],"edges":[]}"#,
        )
        .unwrap_err();
        assert_eq!(
            err,
            ParseError::WrongType {
                path: "nodes[0].output[0]".into(),
                expected: "string"
            }
        );
        let err = parse_plan(
            r#"{"nodes":[{"id":"a","name":"n","instruction":"i","output":[],"verification":[{"name":"v","type":"shell","code":"x"}]}],"edges":[]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::InvalidValue { ref path, .. } if path == "nodes[0].verification[0].type"));
        let err = parse_plan(
            r#"{"nodes":[{"id":"a","name":"n","instruction":"i","output":[]}],"edges":[["a"]]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::WrongType { ref path, .. } if path == "edges[0]"));
    }

    #[test]
    fn fenced_and_padded_input() {
        let text = "\n```json\n{\"nodes\":[{\"id\":\"n1\",\"name\":\"s\",\"instruction\":\"i\",\"output\":[]}],\"edges\":[]}\n```\n";
        assert!(parse_plan(text).is_ok());
    }

    #[test]
    fn unknown_fields_and_final_marker() {
        let text = r#"{"nodes":[
            {"id":"a","name":"n","instruction":"i","output":["x"],"priority":3,"final":true},
            {"id":"b","name":"n","instruction":"i","output":[]}
        ],"edges":[],"meta":{"k":1}}"#;
        let plan = parse_plan(text).unwrap();
        assert_eq!(plan.final_node_id.as_deref(), Some("a"));
    }
}
