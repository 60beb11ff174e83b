//! A small expression language for drift components.
//!
//! Grammar (whitespace ignored):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := ('-' | '+') unary | power
//! power := atom ('^' '-'? integer)?
//! atom  := number | 'x' index | func '(' expr ')' | '(' expr ')'
//! func  := sin | cos | exp | tanh
//! ```
//!
//! Variables are written `x1`..`xn` (1-based). Exponents are integer literals,
//! which keeps symbolic differentiation exact.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown variable '{name}' at position {position}: state dimension is {dim}")]
    UnknownVariable {
        name: String,
        position: usize,
        dim: usize,
    },
    #[error("division by zero")]
    DivisionByZero,
    #[error("expression evaluated to a non-finite value")]
    NonFinite,
    #[error("point has dimension {got}, expression expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        match s {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "tanh" => Some(Func::Tanh),
            _ => None,
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Tanh => v.tanh(),
        }
    }
}

/// Expression tree. Variable indices are stored 0-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

/// A parsed drift component together with the state dimension it was checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftExpression {
    expr: Expr,
    dim: usize,
}

impl DriftExpression {
    pub fn parse(source: &str, dim: usize) -> Result<Self, ExprError> {
        if dim == 0 {
            return Err(ExprError::Syntax {
                position: 0,
                message: "state dimension must be at least 1".into(),
            });
        }
        let expr = Parser::new(source, dim)?.parse_all()?;
        Ok(Self { expr, dim })
    }

    pub fn from_expr(expr: Expr, dim: usize) -> Result<Self, ExprError> {
        if let Some(k) = expr.max_var() {
            if k >= dim {
                return Err(ExprError::UnknownVariable {
                    name: format!("x{}", k + 1),
                    position: 0,
                    dim,
                });
            }
        }
        Ok(Self { expr, dim })
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        if x.len() != self.dim {
            return Err(ExprError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let v = self.expr.eval(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::NonFinite)
        }
    }

    /// Partial derivative with respect to the 1-based variable `k`.
    ///
    /// # Panics
    /// If `k` is outside `1..=dim`.
    pub fn differentiate(&self, k: usize) -> DriftExpression {
        assert!(
            (1..=self.dim).contains(&k),
            "variable index {k} outside 1..={}",
            self.dim
        );
        DriftExpression {
            expr: self.expr.derivative(k - 1),
            dim: self.dim,
        }
    }
}

impl fmt::Display for DriftExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.fmt(f)
    }
}

impl Expr {
    fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(k) => Some(*k),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.max_var().max(b.max_var())
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(k) => x[*k],
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Expr::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Expr::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Expr::Div(a, b) => {
                let den = b.eval(x)?;
                if den == 0.0 {
                    return Err(ExprError::DivisionByZero);
                }
                a.eval(x)? / den
            }
            Expr::Pow(a, k) => {
                let base = a.eval(x)?;
                if *k < 0 && base == 0.0 {
                    return Err(ExprError::DivisionByZero);
                }
                base.powi(*k)
            }
            Expr::Call(func, a) => func.apply(a.eval(x)?),
        })
    }

    pub fn derivative(&self, k: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(j) => Expr::Const(if *j == k { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.derivative(k)),
            Expr::Add(a, b) => add(a.derivative(k), b.derivative(k)),
            Expr::Sub(a, b) => sub(a.derivative(k), b.derivative(k)),
            Expr::Mul(a, b) => add(
                mul(a.derivative(k), (**b).clone()),
                mul((**a).clone(), b.derivative(k)),
            ),
            Expr::Div(a, b) => {
                let num = sub(
                    mul(a.derivative(k), (**b).clone()),
                    mul((**a).clone(), b.derivative(k)),
                );
                div(num, pow((**b).clone(), 2))
            }
            Expr::Pow(a, p) => mul(
                mul(Expr::Const(*p as f64), pow((**a).clone(), p - 1)),
                a.derivative(k),
            ),
            Expr::Call(func, a) => {
                let inner = (**a).clone();
                let outer = match func {
                    Func::Sin => Expr::Call(Func::Cos, Box::new(inner)),
                    Func::Cos => neg(Expr::Call(Func::Sin, Box::new(inner))),
                    Func::Exp => Expr::Call(Func::Exp, Box::new(inner)),
                    Func::Tanh => sub(
                        Expr::Const(1.0),
                        pow(Expr::Call(Func::Tanh, Box::new(inner)), 2),
                    ),
                };
                mul(outer, a.derivative(k))
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(c) if *c < 0.0 || c.is_sign_negative() => 3,
            Expr::Const(_) | Expr::Var(_) | Expr::Call(..) => 5,
        }
    }
}

// Smart constructors: fold constants and drop additive/multiplicative identities
// so derivative trees stay readable.

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (Expr::Const(z), e) | (e, Expr::Const(z)) if z == 0.0 => e,
        (a, b) => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (e, Expr::Const(z)) if z == 0.0 => e,
        (Expr::Const(z), e) if z == 0.0 => neg(e),
        (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (Expr::Const(z), _) | (_, Expr::Const(z)) if z == 0.0 => Expr::Const(0.0),
        (Expr::Const(o), e) | (e, Expr::Const(o)) if o == 1.0 => e,
        (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(z), _) if z == 0.0 => Expr::Const(0.0),
        (e, Expr::Const(o)) if o == 1.0 => e,
        (a, b) => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, p: i32) -> Expr {
    match (a, p) {
        (_, 0) => Expr::Const(1.0),
        (e, 1) => e,
        (Expr::Const(c), p) => Expr::Const(c.powi(p)),
        (a, p) => Expr::Pow(Box::new(a), p),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Child printed with parentheses when it binds looser than `min`.
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
            if e.precedence() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "-{}", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var(k) => write!(f, "x{}", k + 1),
            Expr::Neg(a) => {
                f.write_str("-")?;
                child(f, a, 3)
            }
            Expr::Add(a, b) => {
                child(f, a, 1)?;
                f.write_str(" + ")?;
                child(f, b, 2)
            }
            Expr::Sub(a, b) => {
                child(f, a, 1)?;
                f.write_str(" - ")?;
                child(f, b, 2)
            }
            Expr::Mul(a, b) => {
                child(f, a, 2)?;
                f.write_str("*")?;
                child(f, b, 3)
            }
            Expr::Div(a, b) => {
                child(f, a, 2)?;
                f.write_str("/")?;
                child(f, b, 4)
            }
            Expr::Pow(a, p) => {
                child(f, a, 5)?;
                write!(f, "^{p}")
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    end: usize,
    dim: usize,
}

impl Parser {
    fn new(source: &str, dim: usize) -> Result<Self, ExprError> {
        let chars: Vec<char> = source.chars().collect();
        let mut tokens = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() || c == '.' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        while j < chars.len() && chars[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let value = text.parse::<f64>().map_err(|_| ExprError::Syntax {
                    position: start,
                    message: format!("malformed number '{text}'"),
                })?;
                tokens.push((Token::Num(value), start));
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                tokens.push((Token::Ident(chars[start..i].iter().collect()), start));
            } else {
                let tok = match c {
                    '+' | '-' | '*' | '/' | '^' => Token::Op(c),
                    '(' => Token::LParen,
                    ')' => Token::RParen,
                    _ => {
                        return Err(ExprError::Syntax {
                            position: i,
                            message: format!("unexpected character '{c}'"),
                        })
                    }
                };
                tokens.push((tok, i));
                i += 1;
            }
        }
        Ok(Self {
            tokens,
            pos: 0,
            end: chars.len(),
            dim,
        })
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn position(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(_, p)| *p)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            position: self.position(),
            message: message.into(),
        })
    }

    fn parse_all(mut self) -> Result<Expr, ExprError> {
        if self.tokens.is_empty() {
            return self.error("empty expression");
        }
        let e = self.expr()?;
        if self.peek().is_some() {
            return self.error("unexpected trailing input");
        }
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let negative = if let Some(Token::Op('-')) = self.peek() {
                self.pos += 1;
                true
            } else {
                false
            };
            let exponent = match self.peek() {
                Some(Token::Num(v)) if v.fract() == 0.0 && *v <= i32::MAX as f64 => *v as i32,
                _ => return self.error("exponent must be an integer literal"),
            };
            self.pos += 1;
            return Ok(Expr::Pow(
                Box::new(base),
                if negative { -exponent } else { exponent },
            ));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let position = self.position();
        match self.peek().cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(&Token::RParen) {
                    return self.error("expected ')'");
                }
                self.pos += 1;
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                if let Some(func) = Func::from_name(&name) {
                    if self.peek() != Some(&Token::LParen) {
                        return self.error(format!("expected '(' after {name}"));
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek() != Some(&Token::RParen) {
                        return self.error("expected ')'");
                    }
                    self.pos += 1;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                match name.strip_prefix('x').map(str::parse::<usize>) {
                    Some(Ok(k)) if (1..=self.dim).contains(&k) => Ok(Expr::Var(k - 1)),
                    _ => Err(ExprError::UnknownVariable {
                        name,
                        position,
                        dim: self.dim,
                    }),
                }
            }
            Some(_) => self.error("expected a number, variable, function or '('"),
            None => self.error("unexpected end of expression"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str, n: usize, x: &[f64]) -> f64 {
        DriftExpression::parse(src, n).unwrap().eval(x).unwrap()
    }

    #[test]
    fn variable_lookup_and_arithmetic() {
        assert_eq!(eval("x2", 2, &[0.5, -0.3]), -0.3);
        assert_eq!(eval("x1^2*x2", 2, &[2.0, 3.0]), 12.0);
        assert_eq!(eval("-x1^2", 1, &[3.0]), -9.0);
        assert_eq!(eval("2 - 3 - 4", 1, &[0.0]), -5.0);
        assert_eq!(eval("8/4/2", 1, &[0.0]), 1.0);
        assert_eq!(eval("1.5e1 + x1^-1", 1, &[2.0]), 15.5);
        assert!((eval("tanh(0) + exp(0) + cos(0) + sin(0)", 1, &[0.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_variable_is_rejected() {
        let err = DriftExpression::parse("x3", 2).unwrap_err();
        assert!(matches!(
            err,
            ExprError::UnknownVariable { position: 0, .. }
        ));
        assert!(matches!(
            DriftExpression::parse("x0 + 1", 2),
            Err(ExprError::UnknownVariable { .. })
        ));
        assert!(matches!(
            DriftExpression::parse("y", 2),
            Err(ExprError::UnknownVariable { .. })
        ));
    }

    #[test]
    fn syntax_errors_carry_positions() {
        match DriftExpression::parse("x1 + * x2", 2) {
            Err(ExprError::Syntax { position, .. }) => assert_eq!(position, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            DriftExpression::parse("x1^1.5", 1),
            Err(ExprError::Syntax { .. })
        ));
        assert!(matches!(
            DriftExpression::parse("", 1),
            Err(ExprError::Syntax { .. })
        ));
        assert!(matches!(
            DriftExpression::parse("(x1", 1),
            Err(ExprError::Syntax { .. })
        ));
        assert!(matches!(
            DriftExpression::parse("x1 $ 2", 1),
            Err(ExprError::Syntax { position: 3, .. })
        ));
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let e = DriftExpression::parse("1/x1", 1).unwrap();
        assert_eq!(e.eval(&[0.0]), Err(ExprError::DivisionByZero));
        let e = DriftExpression::parse("x1^-2", 1).unwrap();
        assert_eq!(e.eval(&[0.0]), Err(ExprError::DivisionByZero));
    }

    #[test]
    fn power_rule() {
        let d = DriftExpression::parse("x1^2*x2", 2)
            .unwrap()
            .differentiate(1);
        let expected = DriftExpression::parse("2*x1*x2", 2).unwrap();
        for x in [[0.3, -1.2], [1.0, 2.0], [-2.5, 0.7], [4.0, 4.0], [0.0, 9.0]] {
            assert!((d.eval(&x).unwrap() - expected.eval(&x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_derivative_is_zero() {
        let d = DriftExpression::parse("3.5", 1).unwrap().differentiate(1);
        assert_eq!(d.expr(), &Expr::Const(0.0));
    }

    #[test]
    fn van_der_pol_second_component() {
        let f2 = DriftExpression::parse("(1 - x1^2)*x2 - x1", 2).unwrap();
        let d = f2.differentiate(2);
        assert_eq!(d.eval(&[1.0, 2.0]).unwrap(), 0.0);
        // central differences, h = 1e-6
        let h = 1e-6;
        for x in [[0.3, -0.4], [1.7, 2.0], [-0.9, 1.1]] {
            let fd = (f2.eval(&[x[0], x[1] + h]).unwrap() - f2.eval(&[x[0], x[1] - h]).unwrap())
                / (2.0 * h);
            let exact = d.eval(&x).unwrap();
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn printer_output_reparses() {
        for src in [
            "x1 - (x2 - 3)",
            "-(x1 + 2)^3",
            "x1/(x2*x1)",
            "exp(-x1^2/2)*sin(x2)",
            "tanh(x1)^-2 - -x2",
            "1e-7*x1",
        ] {
            let e = DriftExpression::parse(src, 2).unwrap();
            let printed = e.to_string();
            let back = DriftExpression::parse(&printed, 2).unwrap();
            let x = [0.37, -1.3];
            assert_eq!(
                e.eval(&x).unwrap(),
                back.eval(&x).unwrap(),
                "{src} -> {printed}"
            );
        }
    }
}
