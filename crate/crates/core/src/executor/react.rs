//! Parsing of ReAct-formatted model turns.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::text::strip_code_fence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Action,
    FinalAnswer,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactStep {
    pub kind: StepKind,
    pub thought: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_name: Option<String>,
    /// Canonical JSON text of the action's argument object.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_input_json: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// Why a turn was classified as malformed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl ReactStep {
    fn malformed(thought: String, diagnostic: impl Into<String>) -> Self {
        Self {
            kind: StepKind::Malformed,
            thought,
            action_name: None,
            action_input_json: None,
            answer: None,
            diagnostic: Some(diagnostic.into()),
        }
    }

    pub fn final_answer(thought: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            kind: StepKind::FinalAnswer,
            thought: thought.into(),
            action_name: None,
            action_input_json: None,
            answer: Some(answer.into()),
            diagnostic: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Marker {
    Thought,
    Action,
    ActionInput,
    Answer,
    Observation,
}

const MARKERS: [(&str, Marker); 5] = [
    ("Thought:", Marker::Thought),
    ("Action Input:", Marker::ActionInput),
    ("Action:", Marker::Action),
    ("Answer:", Marker::Answer),
    ("Observation:", Marker::Observation),
];

/// A marker occurrence: which marker, and the text following it on that line
/// together with all continuation lines up to the next marker.
struct Section<'a> {
    marker: Marker,
    lines: Vec<&'a str>,
}

impl Section<'_> {
    fn body(&self) -> String {
        self.lines.join("\n").trim().to_string()
    }
}

fn sections(text: &str) -> Vec<Section<'_>> {
    let mut out: Vec<Section<'_>> = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim_start();
        let hit = MARKERS
            .iter()
            .find(|(prefix, _)| trimmed.starts_with(prefix))
            .map(|(prefix, marker)| (*marker, &trimmed[prefix.len()..]));
        match (hit, out.last_mut()) {
            (Some((marker, rest)), _) => out.push(Section {
                marker,
                lines: vec![rest],
            }),
            (None, Some(section)) => section.lines.push(line),
            (None, None) => {}
        }
    }
    out
}

/// Classifies one model turn as an action, a final answer, or malformed.
///
/// Whichever of `Action:` / `Answer:` appears first decides the kind. For
/// answers the last `Answer:` block wins. One surrounding code fence is
/// tolerated.
pub fn parse_react_step(completion: &str) -> ReactStep {
    let text = strip_code_fence(completion.trim());
    let secs = sections(text);
    let thought = secs
        .iter()
        .find(|s| s.marker == Marker::Thought)
        .map(Section::body)
        .unwrap_or_default();

    let first_decisive = secs
        .iter()
        .position(|s| matches!(s.marker, Marker::Action | Marker::Answer));
    let Some(first) = first_decisive else {
        if secs.iter().any(|s| s.marker == Marker::ActionInput) {
            return ReactStep::malformed(thought, "found `Action Input:` without an `Action:` line");
        }
        return ReactStep::malformed(thought, "expected an `Action:` or `Answer:` line");
    };

    if secs[first].marker == Marker::Answer {
        let last = secs
            .iter()
            .rposition(|s| s.marker == Marker::Answer)
            .unwrap_or(first);
        let body = secs[last].body();
        if body.is_empty() {
            return ReactStep::malformed(thought, "`Answer:` is empty");
        }
        return ReactStep::final_answer(thought, body);
    }

    let name = secs[first]
        .body()
        .trim_matches(|c: char| c == '`' || c == '"' || c == '\'' || c.is_whitespace())
        .to_string();
    if name.is_empty() {
        return ReactStep::malformed(thought, "`Action:` names no tool");
    }
    let Some(input) = secs[first + 1..]
        .iter()
        .take_while(|s| !matches!(s.marker, Marker::Action | Marker::Answer | Marker::Observation))
        .find(|s| s.marker == Marker::ActionInput)
    else {
        return ReactStep::malformed(thought, "`Action:` without an `Action Input:` line");
    };
    let raw = input.body();
    let raw = strip_code_fence(&raw);
    let mut stream = serde_json::Deserializer::from_str(raw).into_iter::<Value>();
    match stream.next() {
        Some(Ok(Value::Object(map))) => ReactStep {
            kind: StepKind::Action,
            thought,
            action_name: Some(name),
            action_input_json: Some(Value::Object(map).to_string()),
            answer: None,
            diagnostic: None,
        },
        Some(Ok(other)) => ReactStep::malformed(
            thought,
            format!("`Action Input:` must be a JSON object, got {other}"),
        ),
        Some(Err(err)) => ReactStep::malformed(thought, format!("`Action Input:` is not valid JSON: {err}")),
        None => ReactStep::malformed(thought, "`Action Input:` is empty"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_turn() {
        let step = parse_react_step(
            "Thought: need math.\nAction: calculator\nAction Input: {\"input\":\"2+2\"}",
        );
        assert_eq!(step.kind, StepKind::Action);
        assert_eq!(step.thought, "need math.");
        assert_eq!(step.action_name.as_deref(), Some("calculator"));
        assert_eq!(step.action_input_json.as_deref(), Some(r#"{"input":"2+2"}"#));
    }

    #[test]
    fn answer_turn() {
        let step = parse_react_step("Thought: done.\nAnswer: {\"ans\": 4}");
        assert_eq!(step.kind, StepKind::FinalAnswer);
        assert_eq!(step.answer.as_deref(), Some("{\"ans\": 4}"));
    }

    #[test]
    fn missing_action_input() {
        let step = parse_react_step("Action: x");
        assert_eq!(step.kind, StepKind::Malformed);
        assert!(step.diagnostic.unwrap().contains("Action Input"));
    }

    #[test]
    fn multiline_answer_and_last_block_wins() {
        let step = parse_react_step("Thought: a\nAnswer: {\"x\": 1}\nThought: again\nAnswer: {\n  \"x\": 2\n}");
        assert_eq!(step.answer.as_deref(), Some("{\n  \"x\": 2\n}"));
    }

    #[test]
    fn hallucinated_observation_is_ignored() {
        let step = parse_react_step(
            "Thought: t\nAction: search\nAction Input: {}\nObservation: made up\nAnswer: {}",
        );
        assert_eq!(step.kind, StepKind::Action);
        assert_eq!(step.action_input_json.as_deref(), Some("{}"));
    }

    #[test]
    fn fenced_turn_and_fenced_input() {
        let step = parse_react_step("```\nThought: t\nAnswer: {\"ans\": 1}\n```");
        assert_eq!(step.kind, StepKind::FinalAnswer);
        let step = parse_react_step("Thought: t\nAction: calc\nAction Input: ```json\n{\"input\": \"1\"}\n```");
        assert_eq!(step.kind, StepKind::Action);
    }

    #[test]
    fn non_object_input_is_malformed() {
        assert_eq!(
            parse_react_step("Thought: t\nAction: calc\nAction Input: [1]").kind,
            StepKind::Malformed
        );
        assert_eq!(
            parse_react_step("Thought: t\nAction: calc\nAction Input: {oops").kind,
            StepKind::Malformed
        );
        assert_eq!(parse_react_step("just prose").kind, StepKind::Malformed);
        assert_eq!(parse_react_step("Thought: t\nAnswer:").kind, StepKind::Malformed);
    }
}
