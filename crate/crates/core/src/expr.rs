//! A small arithmetic expression language over `x`, `y` and constants.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | '+' unary | atom
//! atom   := number | 'x' | 'y' | 'pi' | func '(' expr ')' | '(' expr ')'
//! func   := 'sin' | 'cos' | 'exp'
//! ```
//!
//! Expressions can be differentiated symbolically, which is how analytic
//! divergences of configured velocity fields are obtained.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::Point;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Axis),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if let Some(t) = p.tokens.get(p.pos) {
            return Err(Error::Expression {
                offset: t.offset,
                message: format!("unexpected token {:?}", t.kind),
            });
        }
        Ok(e)
    }

    pub fn eval(&self, p: Point) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(Axis::X) => p[0],
            Expr::Var(Axis::Y) => p[1],
            Expr::Neg(a) => -a.eval(p),
            Expr::Add(a, b) => a.eval(p) + b.eval(p),
            Expr::Sub(a, b) => a.eval(p) - b.eval(p),
            Expr::Mul(a, b) => a.eval(p) * b.eval(p),
            Expr::Div(a, b) => a.eval(p) / b.eval(p),
            Expr::Sin(a) => a.eval(p).sin(),
            Expr::Cos(a) => a.eval(p).cos(),
            Expr::Exp(a) => a.eval(p).exp(),
        }
    }

    pub fn uses(&self, axis: Axis) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(a) => *a == axis,
            Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => a.uses(axis),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.uses(axis) || b.uses(axis)
            }
        }
    }

    /// Symbolic partial derivative, lightly simplified.
    pub fn derivative(&self, axis: Axis) -> Expr {
        use Expr::*;
        match self {
            Const(_) => Const(0.0),
            Var(a) => Const(if *a == axis { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.derivative(axis)),
            Add(a, b) => add(a.derivative(axis), b.derivative(axis)),
            Sub(a, b) => sub(a.derivative(axis), b.derivative(axis)),
            Mul(a, b) => add(
                mul(a.derivative(axis), (**b).clone()),
                mul((**a).clone(), b.derivative(axis)),
            ),
            Div(a, b) => {
                // (a'b - ab') / b^2
                let num = sub(
                    mul(a.derivative(axis), (**b).clone()),
                    mul((**a).clone(), b.derivative(axis)),
                );
                div(num, mul((**b).clone(), (**b).clone()))
            }
            Sin(a) => mul(Cos(a.clone()), a.derivative(axis)),
            Cos(a) => mul(neg(Sin(a.clone())), a.derivative(axis)),
            Exp(a) => mul(Exp(a.clone()), a.derivative(axis)),
        }
    }
}

fn is_zero(e: &Expr) -> bool {
    matches!(e, Expr::Const(c) if *c == 0.0)
}

fn is_one(e: &Expr) -> bool {
    matches!(e, Expr::Const(c) if *c == 1.0)
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) {
        b
    } else if is_zero(&b) {
        a
    } else {
        Expr::Add(Box::new(a), Box::new(b))
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    if is_zero(&b) {
        a
    } else if is_zero(&a) {
        neg(b)
    } else {
        Expr::Sub(Box::new(a), Box::new(b))
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) || is_zero(&b) {
        Expr::Const(0.0)
    } else if is_one(&a) {
        b
    } else if is_one(&b) {
        a
    } else {
        Expr::Mul(Box::new(a), Box::new(b))
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) {
        Expr::Const(0.0)
    } else {
        Expr::Div(Box::new(a), Box::new(b))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(Axis::X) => write!(f, "x"),
            Expr::Var(Axis::Y) => write!(f, "y"),
            Expr::Neg(a) => write!(f, "-({a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        let kind = match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
                continue;
            }
            '+' => TokenKind::Plus,
            '-' => TokenKind::Minus,
            '*' => TokenKind::Star,
            '/' => TokenKind::Slash,
            '(' => TokenKind::LParen,
            ')' => TokenKind::RParen,
            c if c.is_ascii_digit() || c == '.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // exponent part
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| Error::Expression {
                    offset: start,
                    message: format!("bad number {text:?}"),
                })?;
                out.push(Token {
                    kind: TokenKind::Num(v),
                    offset: start,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() => {
                while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                out.push(Token {
                    kind: TokenKind::Ident(src[start..i].to_string()),
                    offset: start,
                });
                continue;
            }
            other => {
                return Err(Error::Expression {
                    offset: start,
                    message: format!("unexpected character {other:?}"),
                })
            }
        };
        out.push(Token { kind, offset: start });
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&TokenKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn offset(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|t| t.offset)
            .unwrap_or_else(|| self.tokens.last().map(|t| t.offset + 1).unwrap_or(0))
    }

    fn expect(&mut self, kind: TokenKind) -> Result<()> {
        if self.peek() == Some(&kind) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Expression {
                offset: self.offset(),
                message: format!("expected {kind:?}"),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(TokenKind::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(TokenKind::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(TokenKind::Star) => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(TokenKind::Slash) => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(TokenKind::Minus) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(TokenKind::Plus) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let offset = self.offset();
        let tok = self.tokens.get(self.pos).cloned().ok_or(Error::Expression {
            offset,
            message: "unexpected end of expression".into(),
        })?;
        self.pos += 1;
        match tok.kind {
            TokenKind::Num(v) => Ok(Expr::Const(v)),
            TokenKind::LParen => {
                let e = self.expr()?;
                self.expect(TokenKind::RParen)?;
                Ok(e)
            }
            TokenKind::Ident(name) => match name.as_str() {
                "x" => Ok(Expr::Var(Axis::X)),
                "y" => Ok(Expr::Var(Axis::Y)),
                "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                "sin" | "cos" | "exp" => {
                    self.expect(TokenKind::LParen)?;
                    let arg = Box::new(self.expr()?);
                    self.expect(TokenKind::RParen)?;
                    Ok(match name.as_str() {
                        "sin" => Expr::Sin(arg),
                        "cos" => Expr::Cos(arg),
                        _ => Expr::Exp(arg),
                    })
                }
                other => Err(Error::Expression {
                    offset: tok.offset,
                    message: format!("unknown identifier {other:?}"),
                }),
            },
            other => Err(Error::Expression {
                offset: tok.offset,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ev(s: &str, x: f64, y: f64) -> f64 {
        Expr::parse(s).unwrap().eval([x, y])
    }

    #[test]
    fn precedence_and_unary() {
        assert_eq!(ev("1 + 2 * 3", 0.0, 0.0), 7.0);
        assert_eq!(ev("(1 + 2) * 3", 0.0, 0.0), 9.0);
        assert_eq!(ev("-x", 2.0, 0.0), -2.0);
        assert_eq!(ev("x*(1-x)", 0.25, 0.0), 0.1875);
        assert_eq!(ev("8 / 2 / 2", 0.0, 0.0), 2.0);
        assert_eq!(ev("2 - -y", 0.0, 3.0), 5.0);
        assert_eq!(ev("1.5e-1", 0.0, 0.0), 0.15);
        assert!((ev("sin(pi*x)*cos(pi*y)", 0.5, 0.0) - 1.0).abs() < 1e-15);
        assert!((ev("exp(0)", 0.0, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_offsets() {
        match Expr::parse("1 + z") {
            Err(Error::Expression { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("sin x").is_err());
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("1 2").is_err());
        assert!(Expr::parse("").is_err());
        assert!(Expr::parse("2 ^ 3").is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let cases = [
            "x*(1-x)",
            "-x",
            "sin(pi*x)*cos(pi*y)",
            "exp(-x*y) / (1 + x*x)",
            "cos(2*x + y) - 3*y",
        ];
        let pts = [[0.3, 0.7], [0.81, 0.12], [0.5, 0.5]];
        for src in cases {
            let e = Expr::parse(src).unwrap();
            for axis in [Axis::X, Axis::Y] {
                let d = e.derivative(axis);
                for p in pts {
                    let eps = 1e-6;
                    let (mut a, mut b) = (p, p);
                    let k = if axis == Axis::X { 0 } else { 1 };
                    a[k] += eps;
                    b[k] -= eps;
                    let fd = (e.eval(a) - e.eval(b)) / (2.0 * eps);
                    assert!((d.eval(p) - fd).abs() < 1e-7, "{src} d{axis:?} at {p:?}");
                }
            }
        }
        let q = Expr::parse("sin(pi*x)").unwrap().derivative(Axis::X);
        assert!((q.eval([0.0, 0.0]) - PI).abs() < 1e-15);
    }

    #[test]
    fn uses_tracks_variables() {
        let e = Expr::parse("sin(x) + 2").unwrap();
        assert!(e.uses(Axis::X));
        assert!(!e.uses(Axis::Y));
    }
}
