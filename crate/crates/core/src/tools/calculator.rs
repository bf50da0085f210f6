//! Exact rational arithmetic calculator.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{Integer, One, Signed, ToPrimitive, Zero};
use serde_json::json;
use thiserror::Error;

use super::{str_arg, Tool, ToolDescriptor};

/// Digits kept after the point for non-terminating results.
const MAX_FRACTION_DIGITS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at position {position}")]
pub struct EvalError {
    /// Character offset into the expression.
    pub position: usize,
    pub message: String,
}

impl EvalError {
    fn new(position: usize, message: impl Into<String>) -> Self {
        Self {
            position,
            message: message.into(),
        }
    }
}

/// Evaluates `+ - * / × ÷`, parentheses, unary minus and decimal literals.
pub fn calculator_eval(expr: &str) -> Result<String, EvalError> {
    let chars: Vec<char> = expr.chars().collect();
    let mut parser = Parser { chars: &chars, pos: 0 };
    parser.skip_ws();
    if parser.pos == chars.len() {
        return Err(EvalError::new(0, "empty expression"));
    }
    let value = parser.sum()?;
    parser.skip_ws();
    if parser.pos < chars.len() {
        return Err(EvalError::new(
            parser.pos,
            format!("unexpected character `{}`", chars[parser.pos]),
        ));
    }
    Ok(format_rational(&value))
}

pub fn calculator_tool() -> Tool {
    Tool::new(
        ToolDescriptor::new(
            "calculator",
            "A simple arithmetic calculator. Supports +, -, *, /, parentheses and decimal numbers; results are exact.",
            json!({"input": "the arithmetic expression to evaluate, e.g. \"(2+3)*4\""}),
        ),
        |args| {
            let input = str_arg(args, "input")?;
            calculator_eval(input).map_err(|e| format!("calculator error: {e}"))
        },
    )
}

struct Parser<'a> {
    chars: &'a [char],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek_op(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).map(|c| match c {
            '×' => '*',
            '÷' => '/',
            '−' => '-',
            other => *other,
        })
    }

    fn sum(&mut self) -> Result<BigRational, EvalError> {
        let mut acc = self.product()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.product()?;
            acc = if op == '+' { acc + rhs } else { acc - rhs };
        }
        Ok(acc)
    }

    fn product(&mut self) -> Result<BigRational, EvalError> {
        let mut acc = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            let op_pos = self.pos;
            self.pos += 1;
            let rhs = self.unary()?;
            if op == '*' {
                acc *= rhs;
            } else if rhs.is_zero() {
                return Err(EvalError::new(op_pos, "division by zero"));
            } else {
                acc /= rhs;
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<BigRational, EvalError> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<BigRational, EvalError> {
        match self.peek_op() {
            Some('(') => {
                let open = self.pos;
                self.pos += 1;
                let value = self.sum()?;
                if self.peek_op() != Some(')') {
                    return Err(EvalError::new(open, "unbalanced parenthesis"));
                }
                self.pos += 1;
                Ok(value)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) => Err(EvalError::new(self.pos, format!("unexpected character `{c}`"))),
            None => Err(EvalError::new(self.pos, "unexpected end of expression")),
        }
    }

    fn number(&mut self) -> Result<BigRational, EvalError> {
        let start = self.pos;
        let mut digits = String::new();
        let mut scale = 0usize;
        let mut seen_point = false;
        while let Some(&c) = self.chars.get(self.pos) {
            if c.is_ascii_digit() {
                digits.push(c);
                if seen_point {
                    scale += 1;
                }
            } else if c == '.' && !seen_point {
                seen_point = true;
            } else if c == ',' || c == '_' {
                // Digit group separators.
                if !self.chars.get(self.pos + 1).is_some_and(char::is_ascii_digit) {
                    break;
                }
            } else {
                break;
            }
            self.pos += 1;
        }
        if digits.is_empty() {
            return Err(EvalError::new(start, "malformed number"));
        }
        let numer: BigInt = digits
            .parse()
            .map_err(|_| EvalError::new(start, "malformed number"))?;
        Ok(BigRational::new(numer, num::pow(BigInt::from(10), scale)))
    }
}

/// Decimal rendering: exact when the expansion terminates, otherwise
/// rounded half away from zero to twenty fractional digits.
fn format_rational(value: &BigRational) -> String {
    let negative = value.is_negative();
    let abs = value.abs();
    let ten = BigInt::from(10);
    let mut denom = abs.denom().clone();
    for p in [2, 5] {
        let p = BigInt::from(p);
        while denom.is_multiple_of(&p) {
            denom /= &p;
        }
    }
    let terminating = denom.is_one();

    let (mut int_part, mut rem) = abs.numer().div_rem(abs.denom());
    let mut frac = String::new();
    while !rem.is_zero() && (terminating || frac.len() < MAX_FRACTION_DIGITS) {
        rem *= &ten;
        let (digit, r) = rem.div_rem(abs.denom());
        frac.push(char::from(b'0' + digit.to_u8().unwrap_or(0)));
        rem = r;
    }
    if !terminating && !rem.is_zero() && rem.clone() * 2 >= *abs.denom() {
        // Round up the last digit, carrying as needed.
        let mut digits: Vec<u8> = frac.bytes().map(|b| b - b'0').collect();
        let mut carry = true;
        for d in digits.iter_mut().rev() {
            if *d == 9 {
                *d = 0;
            } else {
                *d += 1;
                carry = false;
                break;
            }
        }
        if carry {
            int_part += 1;
        }
        frac = digits.into_iter().map(|d| char::from(b'0' + d)).collect();
    }
    let frac = frac.trim_end_matches('0');
    let mut out = String::new();
    if negative && !(int_part.is_zero() && frac.is_empty()) {
        out.push('-');
    }
    out.push_str(&int_part.to_string());
    if !frac.is_empty() {
        out.push('.');
        out.push_str(frac);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_expressions() {
        assert_eq!(calculator_eval("2+3*4").unwrap(), "14");
        assert_eq!(calculator_eval("(1/4)*8").unwrap(), "2");
        assert_eq!(calculator_eval("0.1 + 0.2").unwrap(), "0.3");
        assert_eq!(calculator_eval("-3 × (2 − 5) ÷ 4").unwrap(), "2.25");
        assert_eq!(calculator_eval("1,000 * 3").unwrap(), "3000");
        assert_eq!(calculator_eval("--2").unwrap(), "2");
    }

    #[test]
    fn non_terminating_results_round() {
        assert_eq!(calculator_eval("1/3").unwrap(), "0.33333333333333333333");
        assert_eq!(calculator_eval("2/3").unwrap(), "0.66666666666666666667");
        assert_eq!(calculator_eval("-2/3").unwrap(), "-0.66666666666666666667");
    }

    #[test]
    fn errors_carry_position() {
        let err = calculator_eval("1/0").unwrap_err();
        assert_eq!(err.position, 1);
        assert!(err.message.contains("division by zero"));
        assert_eq!(calculator_eval("2 + x").unwrap_err().position, 4);
        assert!(calculator_eval("(1+2").is_err());
        assert!(calculator_eval("").is_err());
        assert!(calculator_eval("1 2").is_err());
    }
}
