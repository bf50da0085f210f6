use proptest::prelude::*;
use verimap_core::tools::calculator_eval;

#[derive(Debug, Clone)]
enum Expr {
    Num(i64),
    Neg(Box<Expr>),
    Bin(Box<Expr>, char, Box<Expr>),
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = (0i64..100).prop_map(Expr::Num);
    leaf.prop_recursive(4, 16, 2, |inner| {
        prop_oneof![
            1 => inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            4 => (inner.clone(), prop::sample::select(vec!['+', '-', '*', '/']), inner)
                .prop_map(|(a, op, b)| Expr::Bin(Box::new(a), op, Box::new(b))),
        ]
    })
}

fn render(e: &Expr) -> String {
    match e {
        Expr::Num(n) => n.to_string(),
        Expr::Neg(x) => format!("-({})", render(x)),
        Expr::Bin(a, op, b) => format!("({} {op} {})", render(a), render(b)),
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Reduced fraction with a positive denominator.
type Frac = (i128, i128);

fn norm(n: i128, d: i128) -> Frac {
    let g = gcd(n, d).max(1);
    let s = if d < 0 { -1 } else { 1 };
    (s * n / g, s * d / g)
}

/// `None` on division by zero.
fn eval(e: &Expr) -> Option<Frac> {
    Some(match e {
        Expr::Num(n) => (*n as i128, 1),
        Expr::Neg(x) => {
            let (n, d) = eval(x)?;
            (-n, d)
        }
        Expr::Bin(a, op, b) => {
            let (an, ad) = eval(a)?;
            let (bn, bd) = eval(b)?;
            match op {
                '+' => norm(an * bd + bn * ad, ad * bd),
                '-' => norm(an * bd - bn * ad, ad * bd),
                '*' => norm(an * bn, ad * bd),
                _ if bn == 0 => return None,
                _ => norm(an * bd, ad * bn),
            }
        }
    })
}

/// Exact decimal when the expansion terminates, else 20 digits rounded half
/// away from zero; trailing zeros dropped.
fn decimal((n, d): Frac) -> String {
    let mut rest = d;
    while rest % 2 == 0 {
        rest /= 2;
    }
    while rest % 5 == 0 {
        rest /= 5;
    }
    let terminating = rest == 1;
    let neg = n < 0;
    let n = n.abs();
    let mut int = n / d;
    let mut r = n % d;
    let mut digits = Vec::new();
    while r != 0 && (terminating || digits.len() < 20) {
        r *= 10;
        digits.push((r / d) as u8);
        r %= d;
    }
    if r != 0 && 2 * r >= d {
        let mut i = digits.len();
        loop {
            if i == 0 {
                int += 1;
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    while digits.last() == Some(&0) {
        digits.pop();
    }
    let mut out = String::new();
    if neg && (int != 0 || !digits.is_empty()) {
        out.push('-');
    }
    out.push_str(&int.to_string());
    if !digits.is_empty() {
        out.push('.');
        out.extend(digits.iter().map(|d| char::from(b'0' + d)));
    }
    out
}

fn fits(e: &Expr) -> bool {
    // Keeps the i128 oracle clear of overflow.
    fn size(e: &Expr) -> usize {
        match e {
            Expr::Num(_) => 1,
            Expr::Neg(x) => size(x),
            Expr::Bin(a, _, b) => size(a) + size(b),
        }
    }
    size(e) <= 8
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn matches_rational_oracle(e in expr().prop_filter("small", fits)) {
        let text = render(&e);
        match eval(&e) {
            None => prop_assert!(calculator_eval(&text).is_err(), "{text}"),
            Some(value) => prop_assert_eq!(calculator_eval(&text).unwrap(), decimal(value), "{}", text),
        }
    }
}

#[test]
fn long_terminating_expansion_is_exact() {
    assert_eq!(
        calculator_eval("1/1073741824").unwrap(),
        "0.000000000931322574615478515625"
    );
    assert_eq!(calculator_eval("2/3").unwrap(), "0.66666666666666666667");
    assert_eq!(calculator_eval("1,000 × 3 ÷ 4").unwrap(), "750");
    let err = calculator_eval("4 / (2 - 2)").unwrap_err();
    assert_eq!(err.position, 2);
}
