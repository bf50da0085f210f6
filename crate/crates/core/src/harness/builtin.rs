//! In-process evaluator for a restricted subset of Python assertions.
//!
//! Supported per line: `assert <expr>[, <msg>]`, `<name> = <expr>`,
//! `print(...)`, `import <module>` (ignored) and comments. Expressions
//! cover literals, `inputs`/`outputs` subscripts, arithmetic, comparisons
//! (including `in`, `is`, chaining), boolean operators and a handful of
//! builtins (`len`, `isinstance`, `int`, `float`, `str`, `bool`, `abs`,
//! `round`, `sum`, `min`, `max`, `sorted`) plus common string and dict
//! methods. Anything else fails with error type `unsupported`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde_json::Value;

use super::{Harness, HarnessError, HarnessMode, HarnessRequest, HarnessResponse};

#[derive(Debug, Default, Clone, Copy)]
pub struct BuiltinHarness;

impl BuiltinHarness {
    pub fn new() -> Self {
        Self
    }
}

impl Harness for BuiltinHarness {
    fn evaluate(&self, request: &HarnessRequest) -> Result<HarnessResponse, HarnessError> {
        let started = Instant::now();
        let mut env = HashMap::new();
        if request.mode == HarnessMode::Vf {
            env.insert("inputs".to_string(), Val::from_json(&request.inputs));
            env.insert("outputs".to_string(), Val::from_json(&request.outputs));
        }
        let mut stdout = String::new();
        let mut response = match run(&request.code, &mut env, &mut stdout) {
            Ok(()) => HarnessResponse::pass(stdout),
            Err((line_no, line, err)) => {
                let traceback = format!(
                    "Traceback (most recent call last):\n  File \"<vf>\", line {line_no}, in <module>\n    {}\n{}",
                    line.trim(),
                    err.render()
                );
                let mut resp = HarnessResponse::fail(err.kind.clone(), traceback);
                resp.stdout = stdout;
                resp
            }
        };
        response.duration_ms = started.elapsed().as_millis() as u64;
        Ok(response)
    }
}

// ── Values ───────────────────────────────────────────────────

#[derive(Debug, Clone)]
enum Val {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Val>),
    Dict(Vec<(Val, Val)>),
    Type(&'static str),
    Builtin(&'static str),
    Method(Box<Val>, String),
}

impl Val {
    fn from_json(v: &Value) -> Val {
        match v {
            Value::Null => Val::None,
            Value::Bool(b) => Val::Bool(*b),
            Value::Number(n) => match n.as_i64() {
                Some(i) => Val::Int(i),
                None => Val::Float(n.as_f64().unwrap_or(f64::NAN)),
            },
            Value::String(s) => Val::Str(s.clone()),
            Value::Array(items) => Val::List(items.iter().map(Val::from_json).collect()),
            Value::Object(map) => Val::Dict(
                map.iter()
                    .map(|(k, v)| (Val::Str(k.clone()), Val::from_json(v)))
                    .collect(),
            ),
        }
    }

    fn type_name(&self) -> &'static str {
        match self {
            Val::None => "NoneType",
            Val::Bool(_) => "bool",
            Val::Int(_) => "int",
            Val::Float(_) => "float",
            Val::Str(_) => "str",
            Val::List(_) => "list",
            Val::Dict(_) => "dict",
            Val::Type(_) => "type",
            Val::Builtin(_) | Val::Method(..) => "builtin_function_or_method",
        }
    }

    fn truthy(&self) -> bool {
        match self {
            Val::None => false,
            Val::Bool(b) => *b,
            Val::Int(i) => *i != 0,
            Val::Float(f) => *f != 0.0,
            Val::Str(s) => !s.is_empty(),
            Val::List(l) => !l.is_empty(),
            Val::Dict(d) => !d.is_empty(),
            _ => true,
        }
    }

    fn number(&self) -> Option<f64> {
        match self {
            Val::Bool(b) => Some(*b as i64 as f64),
            Val::Int(i) => Some(*i as f64),
            Val::Float(f) => Some(*f),
            _ => None,
        }
    }

    fn int_like(&self) -> Option<i64> {
        match self {
            Val::Bool(b) => Some(*b as i64),
            Val::Int(i) => Some(*i),
            _ => None,
        }
    }

    fn repr(&self) -> String {
        match self {
            Val::Str(s) => format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'")),
            other => other.to_str(),
        }
    }

    fn to_str(&self) -> String {
        match self {
            Val::None => "None".into(),
            Val::Bool(true) => "True".into(),
            Val::Bool(false) => "False".into(),
            Val::Int(i) => i.to_string(),
            Val::Float(f) => {
                if f.is_finite() && f.fract() == 0.0 && f.abs() < 1e16 {
                    format!("{f:.1}")
                } else {
                    f.to_string()
                }
            }
            Val::Str(s) => s.clone(),
            Val::List(items) => format!(
                "[{}]",
                items.iter().map(Val::repr).collect::<Vec<_>>().join(", ")
            ),
            Val::Dict(pairs) => format!(
                "{{{}}}",
                pairs
                    .iter()
                    .map(|(k, v)| format!("{}: {}", k.repr(), v.repr()))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
            Val::Type(t) => format!("<class '{t}'>"),
            Val::Builtin(name) => format!("<built-in function {name}>"),
            Val::Method(_, name) => format!("<built-in method {name}>"),
        }
    }
}

fn py_eq(a: &Val, b: &Val) -> bool {
    match (a, b) {
        (Val::None, Val::None) => true,
        (Val::Str(x), Val::Str(y)) => x == y,
        (Val::List(x), Val::List(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| py_eq(p, q)),
        (Val::Dict(x), Val::Dict(y)) => {
            x.len() == y.len()
                && x.iter().all(|(k, v)| y.iter().any(|(k2, v2)| py_eq(k, k2) && py_eq(v, v2)))
        }
        (Val::Type(x), Val::Type(y)) => x == y,
        _ => match (a.number(), b.number()) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        },
    }
}

// ── Errors ───────────────────────────────────────────────────

#[derive(Debug)]
struct PyErr {
    kind: String,
    message: String,
}

impl PyErr {
    fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.to_string(),
            message: message.into(),
        }
    }

    fn unsupported(what: impl Into<String>) -> Self {
        Self::new(
            "unsupported",
            format!(
                "{} (the builtin harness evaluates a restricted assertion subset; configure a Python harness for full support)",
                what.into()
            ),
        )
    }

    fn type_err(message: impl Into<String>) -> Self {
        Self::new("TypeError", message)
    }

    fn render(&self) -> String {
        if self.message.is_empty() {
            self.kind.clone()
        } else {
            format!("{}: {}", self.kind, self.message)
        }
    }
}

type PyResult<T> = Result<T, PyErr>;

// ── Tokens ───────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Op(&'static str),
}

const OPS: [&str; 21] = [
    "==", "!=", "<=", ">=", "//", "**", "<", ">", "(", ")", "[", "]", ",", ".", ":", "+", "-", "*",
    "/", "%", "=",
];

fn tokenize(src: &str) -> PyResult<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '#' {
            break;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.' || chars[i] == '_') {
                if (chars[i] == 'e' || chars[i] == 'E') && matches!(chars.get(i + 1), Some('+') | Some('-')) {
                    i += 1;
                }
                i += 1;
            }
            let text: String = chars[start..i].iter().filter(|c| **c != '_').collect();
            if let Ok(v) = text.parse::<i64>() {
                out.push(Tok::Int(v));
            } else if let Ok(v) = text.parse::<f64>() {
                out.push(Tok::Float(v));
            } else {
                return Err(PyErr::new("SyntaxError", format!("invalid number literal {text}")));
            }
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            if matches!(chars.get(i), Some('"') | Some('\'')) && matches!(word.as_str(), "f" | "r" | "b" | "rb" | "br" | "fr") {
                return Err(PyErr::unsupported(format!("{word}-string literals")));
            }
            out.push(Tok::Ident(word));
        } else if c == '"' || c == '\'' {
            let quote = c;
            i += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => return Err(PyErr::new("SyntaxError", "unterminated string literal")),
                    Some(&ch) if ch == quote => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        let esc = chars.get(i + 1).copied().unwrap_or('\\');
                        s.push(match esc {
                            'n' => '\n',
                            't' => '\t',
                            other => other,
                        });
                        i += 2;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            out.push(Tok::Str(s));
        } else {
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            let op = OPS
                .iter()
                .find(|op| rest.starts_with(**op))
                .ok_or_else(|| PyErr::unsupported(format!("character `{c}`")))?;
            out.push(Tok::Op(op));
            i += op.chars().count();
        }
    }
    Ok(out)
}

// ── Statements ───────────────────────────────────────────────

fn run(code: &str, env: &mut HashMap<String, Val>, stdout: &mut String) -> Result<(), (usize, String, PyErr)> {
    for (idx, line) in code.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        exec_line(trimmed, env, stdout).map_err(|e| (idx + 1, line.to_string(), e))?;
    }
    Ok(())
}

fn exec_line(line: &str, env: &mut HashMap<String, Val>, stdout: &mut String) -> PyResult<()> {
    if let Some(rest) = line.strip_prefix("import ") {
        return match rest.trim() {
            "math" | "json" | "re" => Ok(()),
            other => Err(PyErr::unsupported(format!("import of `{other}`"))),
        };
    }
    if line.starts_with("from ") {
        return Err(PyErr::unsupported("from-imports"));
    }
    let toks = tokenize(line)?;
    let mut p = Parser { toks: &toks, pos: 0, env };
    match toks.first() {
        Some(Tok::Ident(kw)) if kw == "assert" => {
            p.pos = 1;
            let cond = p.expr()?;
            let msg = if p.eat_op(",") { Some(p.expr()?) } else { None };
            p.finish()?;
            if !cond.truthy() {
                return Err(PyErr::new(
                    "AssertionError",
                    msg.map(|m| m.to_str()).unwrap_or_default(),
                ));
            }
            Ok(())
        }
        Some(Tok::Ident(name))
            if toks.get(1) == Some(&Tok::Op("=")) && !is_keyword(name) =>
        {
            p.pos = 2;
            let value = p.expr()?;
            p.finish()?;
            let name = name.clone();
            env.insert(name, value);
            Ok(())
        }
        Some(Tok::Ident(name)) if name == "print" => {
            p.pos = 1;
            if !p.eat_op("(") {
                return Err(PyErr::new("SyntaxError", "expected ( after print"));
            }
            let args = p.args(")")?;
            p.finish()?;
            let text = args.iter().map(Val::to_str).collect::<Vec<_>>().join(" ");
            let _ = writeln!(stdout, "{text}");
            Ok(())
        }
        _ => {
            // Bare expression statement: evaluate for side-effect-free errors.
            p.expr()?;
            p.finish()
        }
    }
}

fn is_keyword(word: &str) -> bool {
    matches!(
        word,
        "and" | "or" | "not" | "in" | "is" | "True" | "False" | "None" | "assert" | "if" | "else"
            | "for" | "while" | "def" | "lambda" | "return"
    )
}

// ── Expressions ──────────────────────────────────────────────

struct Parser<'a> {
    toks: &'a [Tok],
    pos: usize,
    env: &'a HashMap<String, Val>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Op(o)) if *o == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, word: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(w)) if w == word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn finish(&self) -> PyResult<()> {
        match self.peek() {
            None => Ok(()),
            Some(tok) => Err(PyErr::unsupported(format!("unexpected token {tok:?}"))),
        }
    }

    fn expr(&mut self) -> PyResult<Val> {
        let value = self.or_expr()?;
        if matches!(self.peek(), Some(Tok::Ident(w)) if w == "if" || w == "for") {
            return Err(PyErr::unsupported("conditional expressions and comprehensions"));
        }
        Ok(value)
    }

    fn or_expr(&mut self) -> PyResult<Val> {
        let mut left = self.and_expr()?;
        while self.eat_word("or") {
            let right = self.and_expr()?;
            if !left.truthy() {
                left = right;
            }
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> PyResult<Val> {
        let mut left = self.not_expr()?;
        while self.eat_word("and") {
            let right = self.not_expr()?;
            if left.truthy() {
                left = right;
            }
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> PyResult<Val> {
        if self.eat_word("not") {
            return Ok(Val::Bool(!self.not_expr()?.truthy()));
        }
        self.comparison()
    }

    fn comp_op(&mut self) -> Option<&'static str> {
        let op = match self.peek()? {
            Tok::Op(o) if matches!(*o, "==" | "!=" | "<" | "<=" | ">" | ">=") => *o,
            Tok::Ident(w) if w == "in" => "in",
            Tok::Ident(w) if w == "is" => {
                if matches!(self.toks.get(self.pos + 1), Some(Tok::Ident(n)) if n == "not") {
                    self.pos += 1;
                    "is not"
                } else {
                    "is"
                }
            }
            Tok::Ident(w) if w == "not" && matches!(self.toks.get(self.pos + 1), Some(Tok::Ident(n)) if n == "in") => {
                self.pos += 1;
                "not in"
            }
            _ => return None,
        };
        self.pos += 1;
        Some(op)
    }

    fn comparison(&mut self) -> PyResult<Val> {
        let mut left = self.arith()?;
        let mut result = true;
        let mut chained = false;
        while let Some(op) = self.comp_op() {
            let right = self.arith()?;
            result = result && compare(op, &left, &right)?;
            left = right;
            chained = true;
        }
        Ok(if chained { Val::Bool(result) } else { left })
    }

    fn arith(&mut self) -> PyResult<Val> {
        let mut left = self.term()?;
        loop {
            if self.eat_op("+") {
                left = binary("+", left, self.term()?)?;
            } else if self.eat_op("-") {
                left = binary("-", left, self.term()?)?;
            } else {
                return Ok(left);
            }
        }
    }

    fn term(&mut self) -> PyResult<Val> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op(o)) if matches!(*o, "*" | "/" | "//" | "%") => *o,
                _ => return Ok(left),
            };
            self.pos += 1;
            left = binary(op, left, self.unary()?)?;
        }
    }

    fn unary(&mut self) -> PyResult<Val> {
        if self.eat_op("-") {
            return match self.unary()? {
                Val::Int(i) => Ok(Val::Int(-i)),
                Val::Float(f) => Ok(Val::Float(-f)),
                Val::Bool(b) => Ok(Val::Int(-(b as i64))),
                other => Err(PyErr::type_err(format!("bad operand type for unary -: '{}'", other.type_name()))),
            };
        }
        if self.eat_op("+") {
            return self.unary();
        }
        let base = self.postfix()?;
        if self.eat_op("**") {
            let exp = self.unary()?;
            return binary("**", base, exp);
        }
        Ok(base)
    }

    fn postfix(&mut self) -> PyResult<Val> {
        let mut value = self.atom()?;
        loop {
            if self.eat_op("[") {
                if matches!(self.peek(), Some(Tok::Op(":"))) {
                    return Err(PyErr::unsupported("slices"));
                }
                let key = self.expr()?;
                if self.eat_op(":") {
                    return Err(PyErr::unsupported("slices"));
                }
                if !self.eat_op("]") {
                    return Err(PyErr::new("SyntaxError", "expected ]"));
                }
                value = subscript(&value, &key)?;
            } else if self.eat_op("(") {
                let args = self.args(")")?;
                value = call(value, args)?;
            } else if self.eat_op(".") {
                match self.peek().cloned() {
                    Some(Tok::Ident(name)) => {
                        self.pos += 1;
                        value = Val::Method(Box::new(value), name);
                    }
                    _ => return Err(PyErr::new("SyntaxError", "expected attribute name")),
                }
            } else {
                return Ok(value);
            }
        }
    }

    fn args(&mut self, close: &'static str) -> PyResult<Vec<Val>> {
        let mut args = Vec::new();
        if self.eat_op(close) {
            return Ok(args);
        }
        loop {
            if matches!((self.peek(), self.toks.get(self.pos + 1)), (Some(Tok::Ident(_)), Some(Tok::Op("=")))) {
                return Err(PyErr::unsupported("keyword arguments"));
            }
            args.push(self.expr()?);
            if self.eat_op(close) {
                return Ok(args);
            }
            if !self.eat_op(",") {
                return Err(PyErr::new("SyntaxError", format!("expected , or {close}")));
            }
            if self.eat_op(close) {
                return Ok(args);
            }
        }
    }

    fn atom(&mut self) -> PyResult<Val> {
        let tok = self
            .peek()
            .cloned()
            .ok_or_else(|| PyErr::new("SyntaxError", "unexpected end of expression"))?;
        self.pos += 1;
        match tok {
            Tok::Int(i) => Ok(Val::Int(i)),
            Tok::Float(f) => Ok(Val::Float(f)),
            Tok::Str(mut s) => {
                // Adjacent literals concatenate.
                while let Some(Tok::Str(next)) = self.peek() {
                    s.push_str(next);
                    self.pos += 1;
                }
                Ok(Val::Str(s))
            }
            Tok::Op("(") => {
                if self.eat_op(")") {
                    return Ok(Val::List(Vec::new()));
                }
                let first = self.expr()?;
                if self.eat_op(")") {
                    return Ok(first);
                }
                if !self.eat_op(",") {
                    return Err(PyErr::new("SyntaxError", "expected )"));
                }
                let mut items = vec![first];
                items.extend(self.args(")")?);
                Ok(Val::List(items))
            }
            Tok::Op("[") => Ok(Val::List(self.args("]")?)),
            Tok::Ident(word) => match word.as_str() {
                "True" => Ok(Val::Bool(true)),
                "False" => Ok(Val::Bool(false)),
                "None" => Ok(Val::None),
                "int" | "float" | "str" | "list" | "dict" | "bool" | "tuple" => Ok(Val::Type(type_static(&word))),
                "len" | "isinstance" | "abs" | "round" | "sum" | "min" | "max" | "sorted" => {
                    Ok(Val::Builtin(builtin_static(&word)))
                }
                "lambda" => Err(PyErr::unsupported("lambda expressions")),
                name => self
                    .env
                    .get(name)
                    .cloned()
                    .ok_or_else(|| PyErr::new("NameError", format!("name '{name}' is not defined"))),
            },
            Tok::Op(op) => Err(PyErr::unsupported(format!("token `{op}`"))),
        }
    }
}

fn type_static(word: &str) -> &'static str {
    match word {
        "int" => "int",
        "float" => "float",
        "str" => "str",
        "list" => "list",
        "dict" => "dict",
        "bool" => "bool",
        _ => "tuple",
    }
}

fn builtin_static(word: &str) -> &'static str {
    match word {
        "len" => "len",
        "isinstance" => "isinstance",
        "abs" => "abs",
        "round" => "round",
        "sum" => "sum",
        "min" => "min",
        "max" => "max",
        _ => "sorted",
    }
}

fn compare(op: &str, a: &Val, b: &Val) -> PyResult<bool> {
    Ok(match op {
        "==" => py_eq(a, b),
        "!=" => !py_eq(a, b),
        "is" => same_identity(a, b),
        "is not" => !same_identity(a, b),
        "in" => contains(b, a)?,
        "not in" => !contains(b, a)?,
        _ => {
            let ord = order(a, b).ok_or_else(|| {
                PyErr::type_err(format!(
                    "'{op}' not supported between instances of '{}' and '{}'",
                    a.type_name(),
                    b.type_name()
                ))
            })?;
            match op {
                "<" => ord.is_lt(),
                "<=" => ord.is_le(),
                ">" => ord.is_gt(),
                _ => ord.is_ge(),
            }
        }
    })
}

fn same_identity(a: &Val, b: &Val) -> bool {
    match (a, b) {
        (Val::None, Val::None) => true,
        (Val::Bool(x), Val::Bool(y)) => x == y,
        (Val::Type(x), Val::Type(y)) => x == y,
        _ => false,
    }
}

fn order(a: &Val, b: &Val) -> Option<std::cmp::Ordering> {
    match (a, b) {
        (Val::Str(x), Val::Str(y)) => Some(x.cmp(y)),
        (Val::List(x), Val::List(y)) => {
            for (p, q) in x.iter().zip(y) {
                if !py_eq(p, q) {
                    return order(p, q);
                }
            }
            Some(x.len().cmp(&y.len()))
        }
        _ => a.number()?.partial_cmp(&b.number()?),
    }
}

fn contains(container: &Val, item: &Val) -> PyResult<bool> {
    match container {
        Val::Str(s) => match item {
            Val::Str(sub) => Ok(s.contains(sub.as_str())),
            other => Err(PyErr::type_err(format!(
                "'in <string>' requires string as left operand, not {}",
                other.type_name()
            ))),
        },
        Val::List(items) => Ok(items.iter().any(|v| py_eq(v, item))),
        Val::Dict(pairs) => Ok(pairs.iter().any(|(k, _)| py_eq(k, item))),
        other => Err(PyErr::type_err(format!(
            "argument of type '{}' is not iterable",
            other.type_name()
        ))),
    }
}

fn binary(op: &str, a: Val, b: Val) -> PyResult<Val> {
    let unsupported = |a: &Val, b: &Val| {
        PyErr::type_err(format!(
            "unsupported operand type(s) for {op}: '{}' and '{}'",
            a.type_name(),
            b.type_name()
        ))
    };
    match (op, &a, &b) {
        ("+", Val::Str(x), Val::Str(y)) => return Ok(Val::Str(format!("{x}{y}"))),
        ("+", Val::List(x), Val::List(y)) => return Ok(Val::List(x.iter().chain(y).cloned().collect())),
        ("*", Val::Str(s), n) | ("*", n, Val::Str(s)) if n.int_like().is_some() => {
            return Ok(Val::Str(s.repeat(n.int_like().unwrap_or(0).max(0) as usize)))
        }
        _ => {}
    }
    if let (Some(x), Some(y)) = (a.int_like(), b.int_like()) {
        let overflow = || PyErr::new("OverflowError", "integer result too large for the builtin harness");
        return match op {
            "+" => x.checked_add(y).map(Val::Int).ok_or_else(overflow),
            "-" => x.checked_sub(y).map(Val::Int).ok_or_else(overflow),
            "*" => x.checked_mul(y).map(Val::Int).ok_or_else(overflow),
            "/" if y == 0 => Err(PyErr::new("ZeroDivisionError", "division by zero")),
            "/" => Ok(Val::Float(x as f64 / y as f64)),
            "//" | "%" if y == 0 => Err(PyErr::new("ZeroDivisionError", "integer division or modulo by zero")),
            "//" => Ok(Val::Int(x.div_euclid(y) - if y < 0 && x.rem_euclid(y) != 0 { 1 } else { 0 })),
            "%" => Ok(Val::Int(((x % y) + y) % y)),
            "**" if y >= 0 => u32::try_from(y)
                .ok()
                .and_then(|e| x.checked_pow(e))
                .map(Val::Int)
                .ok_or_else(overflow),
            "**" => Ok(Val::Float((x as f64).powf(y as f64))),
            _ => Err(unsupported(&a, &b)),
        };
    }
    match (a.number(), b.number()) {
        (Some(x), Some(y)) => match op {
            "+" => Ok(Val::Float(x + y)),
            "-" => Ok(Val::Float(x - y)),
            "*" => Ok(Val::Float(x * y)),
            "/" | "//" | "%" if y == 0.0 => Err(PyErr::new("ZeroDivisionError", "float division by zero")),
            "/" => Ok(Val::Float(x / y)),
            "//" => Ok(Val::Float((x / y).floor())),
            "%" => Ok(Val::Float(x - y * (x / y).floor())),
            "**" => Ok(Val::Float(x.powf(y))),
            _ => Err(unsupported(&a, &b)),
        },
        _ => Err(unsupported(&a, &b)),
    }
}

fn subscript(value: &Val, key: &Val) -> PyResult<Val> {
    match value {
        Val::Dict(pairs) => pairs
            .iter()
            .find(|(k, _)| py_eq(k, key))
            .map(|(_, v)| v.clone())
            .ok_or_else(|| PyErr::new("KeyError", key.repr())),
        Val::List(items) => {
            let idx = key
                .int_like()
                .ok_or_else(|| PyErr::type_err(format!("list indices must be integers, not {}", key.type_name())))?;
            index(items.len(), idx)
                .map(|i| items[i].clone())
                .ok_or_else(|| PyErr::new("IndexError", "list index out of range"))
        }
        Val::Str(s) => {
            let chars: Vec<char> = s.chars().collect();
            let idx = key
                .int_like()
                .ok_or_else(|| PyErr::type_err(format!("string indices must be integers, not {}", key.type_name())))?;
            index(chars.len(), idx)
                .map(|i| Val::Str(chars[i].to_string()))
                .ok_or_else(|| PyErr::new("IndexError", "string index out of range"))
        }
        other => Err(PyErr::type_err(format!("'{}' object is not subscriptable", other.type_name()))),
    }
}

fn index(len: usize, idx: i64) -> Option<usize> {
    let real = if idx < 0 { len as i64 + idx } else { idx };
    (0..len as i64).contains(&real).then_some(real as usize)
}

fn arity(name: &str, args: &[Val], allowed: std::ops::RangeInclusive<usize>) -> PyResult<()> {
    if allowed.contains(&args.len()) {
        Ok(())
    } else {
        Err(PyErr::type_err(format!("{name}() got {} argument(s)", args.len())))
    }
}

fn iterable(v: &Val) -> PyResult<Vec<Val>> {
    match v {
        Val::List(items) => Ok(items.clone()),
        Val::Str(s) => Ok(s.chars().map(|c| Val::Str(c.to_string())).collect()),
        Val::Dict(pairs) => Ok(pairs.iter().map(|(k, _)| k.clone()).collect()),
        other => Err(PyErr::type_err(format!("'{}' object is not iterable", other.type_name()))),
    }
}

fn is_instance(v: &Val, ty: &str) -> bool {
    match ty {
        "int" => matches!(v, Val::Int(_) | Val::Bool(_)),
        "tuple" => false,
        other => v.type_name() == other,
    }
}

fn round_half_even(x: f64) -> f64 {
    let r = x.round();
    if (x - x.trunc()).abs() == 0.5 && r % 2.0 != 0.0 {
        r - x.signum()
    } else {
        r
    }
}

fn call(func: Val, args: Vec<Val>) -> PyResult<Val> {
    match func {
        Val::Builtin(name) => call_builtin(name, args),
        Val::Type(ty) => convert(ty, args),
        Val::Method(recv, name) => call_method(*recv, &name, args),
        other => Err(PyErr::type_err(format!("'{}' object is not callable", other.type_name()))),
    }
}

fn call_builtin(name: &str, args: Vec<Val>) -> PyResult<Val> {
    match name {
        "len" => {
            arity(name, &args, 1..=1)?;
            match &args[0] {
                Val::Str(s) => Ok(Val::Int(s.chars().count() as i64)),
                Val::List(l) => Ok(Val::Int(l.len() as i64)),
                Val::Dict(d) => Ok(Val::Int(d.len() as i64)),
                other => Err(PyErr::type_err(format!("object of type '{}' has no len()", other.type_name()))),
            }
        }
        "isinstance" => {
            arity(name, &args, 2..=2)?;
            let types = match &args[1] {
                Val::Type(t) => vec![*t],
                Val::List(items) => items
                    .iter()
                    .map(|t| match t {
                        Val::Type(t) => Ok(*t),
                        _ => Err(PyErr::type_err("isinstance() arg 2 must be a type or tuple of types")),
                    })
                    .collect::<PyResult<_>>()?,
                _ => return Err(PyErr::type_err("isinstance() arg 2 must be a type or tuple of types")),
            };
            Ok(Val::Bool(types.iter().any(|t| is_instance(&args[0], t))))
        }
        "abs" => {
            arity(name, &args, 1..=1)?;
            match &args[0] {
                Val::Float(f) => Ok(Val::Float(f.abs())),
                v => v
                    .int_like()
                    .map(|i| Val::Int(i.abs()))
                    .ok_or_else(|| PyErr::type_err(format!("bad operand type for abs(): '{}'", v.type_name()))),
            }
        }
        "round" => {
            arity(name, &args, 1..=2)?;
            let x = args[0]
                .number()
                .ok_or_else(|| PyErr::type_err(format!("type {} doesn't define __round__", args[0].type_name())))?;
            match args.get(1) {
                None | Some(Val::None) => Ok(Val::Int(round_half_even(x) as i64)),
                Some(n) => {
                    let digits = n.int_like().ok_or_else(|| PyErr::type_err("ndigits must be an integer"))?;
                    if args[0].int_like().is_some() {
                        return Ok(args[0].clone());
                    }
                    let scale = 10f64.powi(digits as i32);
                    Ok(Val::Float(round_half_even(x * scale) / scale))
                }
            }
        }
        "sum" => {
            arity(name, &args, 1..=2)?;
            let start = args.get(1).cloned().unwrap_or(Val::Int(0));
            iterable(&args[0])?.into_iter().try_fold(start, |acc, v| binary("+", acc, v))
        }
        "min" | "max" => {
            let items = if args.len() == 1 { iterable(&args[0])? } else { args };
            let mut iter = items.into_iter();
            let first = iter
                .next()
                .ok_or_else(|| PyErr::new("ValueError", format!("{name}() arg is an empty sequence")))?;
            iter.try_fold(first, |best, v| {
                let ord = order(&v, &best).ok_or_else(|| PyErr::type_err("values are not comparable"))?;
                let better = if name == "min" { ord.is_lt() } else { ord.is_gt() };
                Ok(if better { v } else { best })
            })
        }
        _ => {
            arity(name, &args, 1..=1)?;
            let mut items = iterable(&args[0])?;
            let mut err = None;
            items.sort_by(|a, b| {
                order(a, b).unwrap_or_else(|| {
                    err = Some(PyErr::type_err("values are not comparable"));
                    std::cmp::Ordering::Equal
                })
            });
            match err {
                Some(e) => Err(e),
                None => Ok(Val::List(items)),
            }
        }
    }
}

fn convert(ty: &str, args: Vec<Val>) -> PyResult<Val> {
    arity(ty, &args, 0..=1)?;
    let Some(v) = args.into_iter().next() else {
        return Ok(match ty {
            "int" => Val::Int(0),
            "float" => Val::Float(0.0),
            "str" => Val::Str(String::new()),
            "bool" => Val::Bool(false),
            "dict" => Val::Dict(Vec::new()),
            _ => Val::List(Vec::new()),
        });
    };
    match ty {
        "str" => Ok(Val::Str(v.to_str())),
        "bool" => Ok(Val::Bool(v.truthy())),
        "list" | "tuple" => Ok(Val::List(iterable(&v)?)),
        "int" => match &v {
            Val::Float(f) if f.is_finite() => Ok(Val::Int(f.trunc() as i64)),
            Val::Str(s) => s.trim().parse::<i64>().map(Val::Int).map_err(|_| {
                PyErr::new("ValueError", format!("invalid literal for int() with base 10: {}", v.repr()))
            }),
            other => other
                .int_like()
                .map(Val::Int)
                .ok_or_else(|| PyErr::type_err(format!("int() argument must be a string or a number, not '{}'", other.type_name()))),
        },
        "float" => match &v {
            Val::Str(s) => s.trim().parse::<f64>().map(Val::Float).map_err(|_| {
                PyErr::new("ValueError", format!("could not convert string to float: {}", v.repr()))
            }),
            other => other
                .number()
                .map(Val::Float)
                .ok_or_else(|| PyErr::type_err(format!("float() argument must be a string or a number, not '{}'", other.type_name()))),
        },
        _ => match v {
            Val::Dict(_) => Ok(v),
            other => Err(PyErr::unsupported(format!("dict() from {}", other.type_name()))),
        },
    }
}

fn call_method(recv: Val, name: &str, args: Vec<Val>) -> PyResult<Val> {
    let no_attr = |recv: &Val| {
        PyErr::new(
            "AttributeError",
            format!("'{}' object has no attribute '{name}'", recv.type_name()),
        )
    };
    match &recv {
        Val::Str(s) => {
            let str_arg = |i: usize| match args.get(i) {
                Some(Val::Str(a)) => Ok(a.clone()),
                _ => Err(PyErr::type_err(format!("{name}() expects a string argument"))),
            };
            match name {
                "lower" => Ok(Val::Str(s.to_lowercase())),
                "upper" => Ok(Val::Str(s.to_uppercase())),
                "strip" => Ok(Val::Str(s.trim().to_string())),
                "startswith" => Ok(Val::Bool(s.starts_with(str_arg(0)?.as_str()))),
                "endswith" => Ok(Val::Bool(s.ends_with(str_arg(0)?.as_str()))),
                "isdigit" => Ok(Val::Bool(!s.is_empty() && s.chars().all(|c| c.is_ascii_digit()))),
                "count" => Ok(Val::Int(s.matches(str_arg(0)?.as_str()).count() as i64)),
                "split" => Ok(Val::List(match args.first() {
                    None => s.split_whitespace().map(|p| Val::Str(p.into())).collect(),
                    Some(_) => s.split(str_arg(0)?.as_str()).map(|p| Val::Str(p.into())).collect(),
                })),
                _ => Err(no_attr(&recv)),
            }
        }
        Val::Dict(pairs) => match name {
            "get" => {
                arity(name, &args, 1..=2)?;
                Ok(pairs
                    .iter()
                    .find(|(k, _)| py_eq(k, &args[0]))
                    .map(|(_, v)| v.clone())
                    .unwrap_or_else(|| args.get(1).cloned().unwrap_or(Val::None)))
            }
            "keys" => Ok(Val::List(pairs.iter().map(|(k, _)| k.clone()).collect())),
            "values" => Ok(Val::List(pairs.iter().map(|(_, v)| v.clone()).collect())),
            _ => Err(no_attr(&recv)),
        },
        Val::List(items) => match name {
            "count" => {
                arity(name, &args, 1..=1)?;
                Ok(Val::Int(items.iter().filter(|v| py_eq(v, &args[0])).count() as i64))
            }
            "index" => {
                arity(name, &args, 1..=1)?;
                items
                    .iter()
                    .position(|v| py_eq(v, &args[0]))
                    .map(|i| Val::Int(i as i64))
                    .ok_or_else(|| PyErr::new("ValueError", format!("{} is not in list", args[0].repr())))
            }
            _ => Err(no_attr(&recv)),
        },
        _ => Err(no_attr(&recv)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn vf(code: &str, outputs: Value) -> HarnessResponse {
        BuiltinHarness
            .evaluate(&HarnessRequest::vf(code, json!({"n": 3}), outputs, 1))
            .unwrap()
    }

    #[test]
    fn assertion_pass_and_fail() {
        assert!(vf(r#"assert outputs["ans"] == 4"#, json!({"ans": 4})).passed);
        let resp = vf(r#"assert outputs["ans"] == 4"#, json!({"ans": 5}));
        assert!(!resp.passed);
        assert_eq!(resp.error_type.as_deref(), Some("AssertionError"));
        let tb = resp.traceback.unwrap();
        assert!(tb.starts_with("Traceback (most recent call last):"));
        assert!(tb.contains("AssertionError"));
    }

    #[test]
    fn key_error_traceback() {
        let resp = vf(r#"assert outputs["missing"] > 0"#, json!({"ans": 1}));
        assert_eq!(resp.error_type.as_deref(), Some("KeyError"));
        assert!(resp.traceback.unwrap().ends_with("KeyError: 'missing'"));
    }

    #[test]
    fn assertion_message() {
        let resp = vf(r#"assert len(outputs["xs"]) == 3, "need three items""#, json!({"xs": [1]}));
        assert!(resp.traceback.unwrap().ends_with("AssertionError: need three items"));
    }

    #[test]
    fn richer_expressions() {
        let outputs = json!({"ans": 4.0, "name": "Paris", "xs": [3, 1, 2], "d": {"k": null}});
        for code in [
            "assert isinstance(outputs['ans'], (int, float))",
            "assert outputs['ans'] == 4 and not outputs['ans'] != 4.0",
            "assert 0 < outputs['ans'] <= 4",
            "assert outputs['name'].lower() == 'paris'",
            "assert 'ar' in outputs['name']",
            "assert sorted(outputs['xs']) == [1, 2, 3]",
            "assert sum(outputs['xs']) == 6 and max(outputs['xs']) == 3",
            "assert outputs['d']['k'] is None",
            "assert 'k' in outputs['d'] and 'z' not in outputs['d']",
            "assert inputs['n'] * 2 + 1 == 7",
            "assert abs(outputs['ans'] - 4) < 1e-9",
            "assert round(2.5) == 2 and round(3.14159, 2) == 3.14",
            "assert str(outputs['ans']) == '4.0' and int('12') == 12",
            "assert 7 // 2 == 3 and -7 // 2 == -4 and 7 % 3 == 1 and 2 ** 10 == 1024",
            "assert outputs.get('nope', 5) == 5",
            "assert isinstance(True, int) and not isinstance(1, str)",
        ] {
            let resp = vf(code, outputs.clone());
            assert!(resp.passed, "{code}: {resp:?}");
        }
    }

    #[test]
    fn assignments_and_imports() {
        let code = "import math\n# comment\nans = outputs['ans']\n\nassert ans == 4";
        assert!(vf(code, json!({"ans": 4})).passed);
        let resp = vf("x = 1\nassert y == 1", json!({}));
        assert_eq!(resp.error_type.as_deref(), Some("NameError"));
        assert!(resp.traceback.unwrap().contains("line 2"));
    }

    #[test]
    fn unsupported_constructs_fail_loudly() {
        for code in [
            "assert all(x > 0 for x in outputs['xs'])",
            "def f():",
            "assert outputs['xs'][1:]",
            "from os import path",
        ] {
            let resp = vf(code, json!({"xs": [1]}));
            assert!(!resp.passed, "{code}");
            assert!(resp.traceback.is_some());
        }
    }

    #[test]
    fn type_and_zero_division_errors() {
        assert_eq!(vf("assert 1 / 0", json!({})).error_type.as_deref(), Some("ZeroDivisionError"));
        assert_eq!(vf("assert 'a' < 1", json!({})).error_type.as_deref(), Some("TypeError"));
    }

    #[test]
    fn exec_mode_prints() {
        let resp = BuiltinHarness
            .evaluate(&HarnessRequest::exec("x = 2\nprint(x + 3, 'ok')", "", 1))
            .unwrap();
        assert!(resp.passed);
        assert_eq!(resp.stdout, "5 ok\n");
    }

    #[test]
    fn requests_are_isolated() {
        let h = BuiltinHarness;
        h.evaluate(&HarnessRequest::exec("canary = 1", "", 1)).unwrap();
        let resp = h.evaluate(&HarnessRequest::exec("print(canary)", "", 1)).unwrap();
        assert_eq!(resp.error_type.as_deref(), Some("NameError"));
    }
}
