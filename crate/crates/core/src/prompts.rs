//! Prompt templates and placeholder substitution.
//!
//! Templates are shipped as text assets and pinned by checksum in tests.
//! Placeholders are `{name}` tokens; any other brace (JSON examples inside
//! the templates) is left untouched.

pub const PLANNER: &str = include_str!("../assets/prompts/planner.txt");
pub const REPLAN: &str = include_str!("../assets/prompts/replan.txt");
pub const EXECUTOR_SYSTEM: &str = include_str!("../assets/prompts/executor_system.txt");
pub const EXECUTOR_TASK: &str = include_str!("../assets/prompts/executor_task.txt");
pub const VERIFIER: &str = include_str!("../assets/prompts/verifier.txt");

/// Single-pass substitution of `{key}` placeholders.
///
/// Substituted values are never rescanned, so a value containing
/// `{task_instruction}` stays literal.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = vars.iter().find(|(key, _)| {
            after.starts_with(key) && after[key.len()..].starts_with('}')
        });
        match hit {
            Some((key, value)) => {
                out.push_str(value);
                rest = &after[key.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
