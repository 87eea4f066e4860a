//! Scalar expression trees over the variables `theta`, `y`, `t`.
//!
//! Grammar (the `bump` primitive takes its evaluation point first, then
//! constant center/radius/amplitude):
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := '-' factor | number | 'theta' | 'y' | 't'
//!         | func '(' expr (',' expr)* ')' | '(' expr ')'
//! func   := sin | cos | exp | bump
//! ```
//!
//! Expressions differentiate symbolically, which keeps Lie brackets of
//! expression-backed vector fields analytic.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::profile::{bump_shape, bump_shape_deriv};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Theta,
    Y,
    T,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::Theta => "theta",
            Var::Y => "y",
            Var::T => "t",
        }
    }
}

#[derive(Debug)]
enum Node<R: Real> {
    Num(R),
    Var(Var),
    Add(ScalarExpr<R>, ScalarExpr<R>),
    Sub(ScalarExpr<R>, ScalarExpr<R>),
    Mul(ScalarExpr<R>, ScalarExpr<R>),
    Div(ScalarExpr<R>, ScalarExpr<R>),
    Neg(ScalarExpr<R>),
    Sin(ScalarExpr<R>),
    Cos(ScalarExpr<R>),
    Exp(ScalarExpr<R>),
    /// `order`-th derivative of the scaled bump shape, applied to `arg`.
    /// Orders 0..=2 evaluate in closed form, higher orders by a centered
    /// difference of the order below.
    Bump { order: u8, arg: ScalarExpr<R>, center: R, radius: R, amplitude: R },
}

fn bump_shape_deriv2<R: Real>(u: R) -> R {
    if u.abs() >= R::one() {
        return R::zero();
    }
    let w = R::one() - u * u;
    let s = (R::one() - w.recip()).exp();
    let g = -R::lit(2.0) * u / (w * w);
    let g_prime = -R::lit(2.0) / (w * w) - R::lit(8.0) * u * u / (w * w * w);
    (g_prime + g * g) * s
}

fn bump_order_eval<R: Real>(order: u8, u: R) -> R {
    match order {
        0 => bump_shape(u),
        1 => bump_shape_deriv(u),
        2 => bump_shape_deriv2(u),
        n => {
            let h = R::lit(1e-5);
            (bump_order_eval(n - 1, u + h) - bump_order_eval(n - 1, u - h))
                / (R::lit(2.0) * h)
        }
    }
}

/// Immutable expression DAG; cloning is cheap.
#[derive(Debug, Clone)]
pub struct ScalarExpr<R: Real>(Arc<Node<R>>);

#[allow(clippy::should_implement_trait)] // constructor-style names, not operators
impl<R: Real> ScalarExpr<R> {
    fn new(node: Node<R>) -> Self {
        ScalarExpr(Arc::new(node))
    }

    pub fn num(c: R) -> Self {
        Self::new(Node::Num(c))
    }

    pub fn var(v: Var) -> Self {
        Self::new(Node::Var(v))
    }

    pub fn add(a: Self, b: Self) -> Self {
        Self::new(Node::Add(a, b))
    }

    pub fn sub(a: Self, b: Self) -> Self {
        Self::new(Node::Sub(a, b))
    }

    pub fn mul(a: Self, b: Self) -> Self {
        Self::new(Node::Mul(a, b))
    }

    pub fn div(a: Self, b: Self) -> Self {
        Self::new(Node::Div(a, b))
    }

    pub fn neg(a: Self) -> Self {
        Self::new(Node::Neg(a))
    }

    pub fn sin(a: Self) -> Self {
        Self::new(Node::Sin(a))
    }

    pub fn cos(a: Self) -> Self {
        Self::new(Node::Cos(a))
    }

    pub fn exp(a: Self) -> Self {
        Self::new(Node::Exp(a))
    }

    pub fn bump(arg: Self, center: R, radius: R, amplitude: R) -> Self {
        Self::new(Node::Bump { order: 0, arg, center, radius, amplitude })
    }

    pub fn eval(&self, theta: R, y: R, t: R) -> R {
        match &*self.0 {
            Node::Num(c) => *c,
            Node::Var(Var::Theta) => theta,
            Node::Var(Var::Y) => y,
            Node::Var(Var::T) => t,
            Node::Add(a, b) => a.eval(theta, y, t) + b.eval(theta, y, t),
            Node::Sub(a, b) => a.eval(theta, y, t) - b.eval(theta, y, t),
            Node::Mul(a, b) => a.eval(theta, y, t) * b.eval(theta, y, t),
            Node::Div(a, b) => {
                let den = b.eval(theta, y, t);
                // guarded division: a zero denominator yields zero
                if den == R::zero() {
                    R::zero()
                } else {
                    a.eval(theta, y, t) / den
                }
            }
            Node::Neg(a) => -a.eval(theta, y, t),
            Node::Sin(a) => a.eval(theta, y, t).sin(),
            Node::Cos(a) => a.eval(theta, y, t).cos(),
            Node::Exp(a) => a.eval(theta, y, t).exp(),
            Node::Bump { order, arg, center, radius, amplitude } => {
                let u = (arg.eval(theta, y, t) - *center) / *radius;
                *amplitude * bump_order_eval(*order, u) / radius.powi(*order as i32)
            }
        }
    }

    /// Symbolic partial derivative with respect to `v`.
    pub fn diff(&self, v: Var) -> Self {
        match &*self.0 {
            Node::Num(_) => Self::num(R::zero()),
            Node::Var(w) => Self::num(if *w == v { R::one() } else { R::zero() }),
            Node::Add(a, b) => Self::add(a.diff(v), b.diff(v)),
            Node::Sub(a, b) => Self::sub(a.diff(v), b.diff(v)),
            Node::Mul(a, b) => Self::add(
                Self::mul(a.diff(v), b.clone()),
                Self::mul(a.clone(), b.diff(v)),
            ),
            Node::Div(a, b) => Self::div(
                Self::sub(
                    Self::mul(a.diff(v), b.clone()),
                    Self::mul(a.clone(), b.diff(v)),
                ),
                Self::mul(b.clone(), b.clone()),
            ),
            Node::Neg(a) => Self::neg(a.diff(v)),
            Node::Sin(a) => Self::mul(Self::cos(a.clone()), a.diff(v)),
            Node::Cos(a) => Self::neg(Self::mul(Self::sin(a.clone()), a.diff(v))),
            Node::Exp(a) => Self::mul(Self::exp(a.clone()), a.diff(v)),
            Node::Bump { order, arg, center, radius, amplitude } => Self::mul(
                Self::new(Node::Bump {
                    order: order + 1,
                    arg: arg.clone(),
                    center: *center,
                    radius: *radius,
                    amplitude: *amplitude,
                }),
                arg.diff(v),
            ),
        }
    }

    /// True when no variable occurs, i.e. the expression folds to a number.
    pub fn is_const(&self) -> bool {
        match &*self.0 {
            Node::Num(_) => true,
            Node::Var(_) => false,
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.is_const() && b.is_const()
            }
            Node::Neg(a) | Node::Sin(a) | Node::Cos(a) | Node::Exp(a) => a.is_const(),
            Node::Bump { arg, .. } => arg.is_const(),
        }
    }

    pub fn const_value(&self) -> Option<R> {
        if self.is_const() {
            Some(self.eval(R::zero(), R::zero(), R::zero()))
        } else {
            None
        }
    }

    fn precedence(&self) -> u8 {
        match &*self.0 {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Neg(..) => 3,
            _ => 4,
        }
    }
}

impl<R: Real> fmt::Display for ScalarExpr<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child<R: Real>(
            f: &mut fmt::Formatter<'_>,
            e: &ScalarExpr<R>,
            parent_prec: u8,
        ) -> fmt::Result {
            if e.precedence() < parent_prec {
                write!(f, "(")?;
                write!(f, "{e}")?;
                write!(f, ")")
            } else {
                write!(f, "{e}")
            }
        }
        match &*self.0 {
            Node::Num(c) => write!(f, "{c}"),
            Node::Var(v) => write!(f, "{}", v.name()),
            Node::Add(a, b) => {
                child(f, a, 1)?;
                write!(f, " + ")?;
                child(f, b, 2)
            }
            Node::Sub(a, b) => {
                child(f, a, 1)?;
                write!(f, " - ")?;
                child(f, b, 2)
            }
            Node::Mul(a, b) => {
                child(f, a, 2)?;
                write!(f, " * ")?;
                child(f, b, 3)
            }
            Node::Div(a, b) => {
                child(f, a, 2)?;
                write!(f, " / ")?;
                child(f, b, 4)
            }
            Node::Neg(a) => {
                write!(f, "-")?;
                child(f, a, 3)
            }
            Node::Sin(a) => write!(f, "sin({a})"),
            Node::Cos(a) => write!(f, "cos({a})"),
            Node::Exp(a) => write!(f, "exp({a})"),
            Node::Bump { order, arg, center, radius, amplitude } => {
                write!(f, "bump{}({arg}, {center}, {radius}, {amplitude})", "'".repeat(*order as usize))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Tokenizer / parser with line-column reporting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Num(f64),
    Ident(String),
    Str(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

pub(crate) struct Lexer {
    toks: Vec<Spanned>,
    pos: usize,
    end_line: usize,
    end_column: usize,
}

impl Lexer {
    pub(crate) fn new(src: &str) -> Result<Self> {
        Self::new_at(src, 1, 1)
    }

    /// Tokenize with an origin offset, so errors inside recipe files can
    /// report file coordinates.
    pub(crate) fn new_at(src: &str, line0: usize, col0: usize) -> Result<Self> {
        let mut toks = Vec::new();
        let mut line = line0;
        let mut column = col0;
        let mut chars = src.chars().peekable();
        while let Some(&ch) = chars.peek() {
            let (l, c) = (line, column);
            let advance = |chars: &mut std::iter::Peekable<std::str::Chars>,
                               line: &mut usize,
                               column: &mut usize| {
                let ch = chars.next().unwrap();
                if ch == '\n' {
                    *line += 1;
                    *column = 1;
                } else {
                    *column += 1;
                }
                ch
            };
            if ch.is_whitespace() {
                advance(&mut chars, &mut line, &mut column);
                continue;
            }
            let tok = match ch {
                '+' => {
                    advance(&mut chars, &mut line, &mut column);
                    Tok::Plus
                }
                '-' => {
                    advance(&mut chars, &mut line, &mut column);
                    Tok::Minus
                }
                '*' => {
                    advance(&mut chars, &mut line, &mut column);
                    Tok::Star
                }
                '/' => {
                    advance(&mut chars, &mut line, &mut column);
                    Tok::Slash
                }
                '(' => {
                    advance(&mut chars, &mut line, &mut column);
                    Tok::LParen
                }
                ')' => {
                    advance(&mut chars, &mut line, &mut column);
                    Tok::RParen
                }
                ',' => {
                    advance(&mut chars, &mut line, &mut column);
                    Tok::Comma
                }
                d if d.is_ascii_digit() || d == '.' => {
                    let mut s = String::new();
                    while let Some(&c2) = chars.peek() {
                        if c2.is_ascii_digit() || c2 == '.' {
                            s.push(advance(&mut chars, &mut line, &mut column));
                        } else if c2 == 'e' || c2 == 'E' {
                            // scientific suffix; may carry a sign
                            let mut clone = chars.clone();
                            clone.next();
                            match clone.peek() {
                                Some(&c3) if c3.is_ascii_digit() || c3 == '+' || c3 == '-' => {
                                    s.push(advance(&mut chars, &mut line, &mut column));
                                    s.push(advance(&mut chars, &mut line, &mut column));
                                }
                                _ => break,
                            }
                        } else {
                            break;
                        }
                    }
                    let v: f64 = s.parse().map_err(|_| Error::Parse {
                        line: l,
                        column: c,
                        message: format!("malformed number `{s}`"),
                    })?;
                    Tok::Num(v)
                }
                '"' => {
                    advance(&mut chars, &mut line, &mut column);
                    let mut s = String::new();
                    loop {
                        match chars.peek() {
                            Some('"') => {
                                advance(&mut chars, &mut line, &mut column);
                                break;
                            }
                            Some(_) => s.push(advance(&mut chars, &mut line, &mut column)),
                            None => {
                                return Err(Error::Parse {
                                    line: l,
                                    column: c,
                                    message: "unterminated string".into(),
                                })
                            }
                        }
                    }
                    Tok::Str(s)
                }
                a if a.is_ascii_alphabetic() || a == '_' => {
                    let mut s = String::new();
                    while let Some(&c2) = chars.peek() {
                        if c2.is_ascii_alphanumeric() || c2 == '_' {
                            s.push(advance(&mut chars, &mut line, &mut column));
                        } else {
                            break;
                        }
                    }
                    Tok::Ident(s)
                }
                other => {
                    return Err(Error::Parse {
                        line: l,
                        column: c,
                        message: format!("unexpected character `{other}`"),
                    });
                }
            };
            toks.push(Spanned { tok, line: l, column: c });
        }
        Ok(Lexer { toks, pos: 0, end_line: line, end_column: column })
    }

    pub(crate) fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .map(|s| (s.line, s.column))
            .unwrap_or((self.end_line, self.end_column))
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> Error {
        let (line, column) = self.here();
        Error::Parse { line, column, message: message.into() }
    }

    pub(crate) fn error_at(&self, pos: (usize, usize), message: impl Into<String>) -> Error {
        Error::Parse { line: pos.0, column: pos.1, message: message.into() }
    }

    pub(crate) fn position(&self) -> (usize, usize) {
        self.here()
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|s| s.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    pub(crate) fn expect(&mut self, want: &Tok, what: &str) -> Result<()> {
        match self.peek() {
            Some(t) if t == want => {
                self.next();
                Ok(())
            }
            _ => Err(self.error(format!("expected {what}"))),
        }
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    pub(crate) fn eat_comma(&mut self) -> Result<()> {
        self.expect(&Tok::Comma, "`,`")
    }

    pub(crate) fn eat_lparen(&mut self) -> Result<()> {
        self.expect(&Tok::LParen, "`(`")
    }

    pub(crate) fn eat_rparen(&mut self) -> Result<()> {
        self.expect(&Tok::RParen, "`)`")
    }

    pub(crate) fn take_ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(_)) => match self.next() {
                Some(Tok::Ident(s)) => Ok(s),
                _ => unreachable!(),
            },
            _ => Err(self.error("expected identifier")),
        }
    }

    pub(crate) fn take_string(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Str(_)) => match self.next() {
                Some(Tok::Str(s)) => Ok(s),
                _ => unreachable!(),
            },
            _ => Err(self.error("expected quoted string")),
        }
    }

}

pub(crate) fn parse_expr_tokens<R: Real>(lx: &mut Lexer) -> Result<ScalarExpr<R>> {
    let mut acc = parse_term(lx)?;
    loop {
        match lx.peek() {
            Some(Tok::Plus) => {
                lx.next();
                let rhs = parse_term(lx)?;
                acc = ScalarExpr::add(acc, rhs);
            }
            Some(Tok::Minus) => {
                lx.next();
                let rhs = parse_term(lx)?;
                acc = ScalarExpr::sub(acc, rhs);
            }
            _ => return Ok(acc),
        }
    }
}

fn parse_term<R: Real>(lx: &mut Lexer) -> Result<ScalarExpr<R>> {
    let mut acc = parse_factor(lx)?;
    loop {
        match lx.peek() {
            Some(Tok::Star) => {
                lx.next();
                let rhs = parse_factor(lx)?;
                acc = ScalarExpr::mul(acc, rhs);
            }
            Some(Tok::Slash) => {
                lx.next();
                let rhs = parse_factor(lx)?;
                acc = ScalarExpr::div(acc, rhs);
            }
            _ => return Ok(acc),
        }
    }
}

fn parse_factor<R: Real>(lx: &mut Lexer) -> Result<ScalarExpr<R>> {
    match lx.peek() {
        Some(Tok::Minus) => {
            lx.next();
            Ok(ScalarExpr::neg(parse_factor(lx)?))
        }
        Some(Tok::Num(_)) => match lx.next() {
            Some(Tok::Num(v)) => Ok(ScalarExpr::num(R::lit(v))),
            _ => unreachable!(),
        },
        Some(Tok::LParen) => {
            lx.next();
            let e = parse_expr_tokens(lx)?;
            lx.eat_rparen()?;
            Ok(e)
        }
        Some(Tok::Ident(_)) => {
            let pos = lx.position();
            let name = lx.take_ident()?;
            match name.as_str() {
                "theta" => Ok(ScalarExpr::var(Var::Theta)),
                "y" => Ok(ScalarExpr::var(Var::Y)),
                "t" => Ok(ScalarExpr::var(Var::T)),
                "sin" | "cos" | "exp" => {
                    lx.eat_lparen()?;
                    let arg = parse_expr_tokens(lx)?;
                    lx.eat_rparen()?;
                    Ok(match name.as_str() {
                        "sin" => ScalarExpr::sin(arg),
                        "cos" => ScalarExpr::cos(arg),
                        _ => ScalarExpr::exp(arg),
                    })
                }
                "bump" => {
                    lx.eat_lparen()?;
                    let arg = parse_expr_tokens(lx)?;
                    lx.eat_comma()?;
                    let center = parse_const_arg(lx)?;
                    lx.eat_comma()?;
                    let radius = parse_const_arg(lx)?;
                    lx.eat_comma()?;
                    let amplitude = parse_const_arg(lx)?;
                    lx.eat_rparen()?;
                    if radius <= R::zero() {
                        return Err(lx.error("bump radius must be positive"));
                    }
                    Ok(ScalarExpr::bump(arg, center, radius, amplitude))
                }
                other => Err(lx.error_at(pos, format!("unknown identifier `{other}`"))),
            }
        }
        _ => Err(lx.error("expected expression")),
    }
}

fn parse_const_arg<R: Real>(lx: &mut Lexer) -> Result<R> {
    let e: ScalarExpr<R> = parse_expr_tokens(lx)?;
    e.const_value().ok_or_else(|| lx.error("expected constant expression"))
}

/// Parse a scalar expression, reporting failures with line and column.
pub fn parse_expr<R: Real>(src: &str) -> Result<ScalarExpr<R>> {
    let mut lx = Lexer::new(src)?;
    let e = parse_expr_tokens(&mut lx)?;
    if !lx.at_end() {
        return Err(lx.error("trailing input after expression"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_evaluates() {
        let e: ScalarExpr<f64> = parse_expr("0.5 + 2*sin(theta) - y/4").unwrap();
        let v = e.eval(0.25, 2.0, 0.0);
        assert!((v - (0.5 + 2.0 * 0.25f64.sin() - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn precedence_and_unary_minus() {
        let e: ScalarExpr<f64> = parse_expr("-2*3 + 4").unwrap();
        assert_eq!(e.eval(0.0, 0.0, 0.0), -2.0);
        let e: ScalarExpr<f64> = parse_expr("2 - 3 - 4").unwrap();
        assert_eq!(e.eval(0.0, 0.0, 0.0), -5.0);
        let e: ScalarExpr<f64> = parse_expr("12/2/3").unwrap();
        assert_eq!(e.eval(0.0, 0.0, 0.0), 2.0);
    }

    #[test]
    fn bump_primitive_evaluates() {
        let e: ScalarExpr<f64> = parse_expr("bump(y, 0.5, 0.25, 0.3)").unwrap();
        assert!((e.eval(0.0, 0.4, 0.0) - 0.24796963128727142).abs() < 1e-15);
        assert_eq!(e.eval(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn parse_error_has_location() {
        let err = parse_expr::<f64>("1 + \n  foo(2)").unwrap_err();
        match err {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, 3);
            }
            other => panic!("wrong error {other:?}"),
        }
    }

    #[test]
    fn print_parse_roundtrip() {
        for src in [
            "0.5 + 2 * sin(theta) - y / 4",
            "bump(y, 0.5, 0.25, 0.3) * cos(t)",
            "-(theta + y) * exp(y - 1)",
            "1 / (1 + y * y)",
        ] {
            let e: ScalarExpr<f64> = parse_expr(src).unwrap();
            let printed = e.to_string();
            let re: ScalarExpr<f64> = parse_expr(&printed).unwrap();
            assert_eq!(printed, re.to_string(), "canonical form not stable for `{src}`");
            for i in 0..20 {
                let (th, y, t) = (i as f64 * 0.05, 0.3 + i as f64 * 0.02, i as f64 * 0.01);
                assert!((e.eval(th, y, t) - re.eval(th, y, t)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn symbolic_diff_matches_finite_difference() {
        let e: ScalarExpr<f64> =
            parse_expr("sin(2*theta)*exp(y) + bump(y, 0.5, 0.3, 1) / (1 + t)").unwrap();
        let h = 1e-6;
        for i in 0..30 {
            let (th, y, t) = (0.03 * i as f64, 0.25 + 0.015 * i as f64, 0.01 * i as f64);
            let d_th = e.diff(Var::Theta).eval(th, y, t);
            let fd_th = (e.eval(th + h, y, t) - e.eval(th - h, y, t)) / (2.0 * h);
            assert!((d_th - fd_th).abs() < 1e-6);
            let d_y = e.diff(Var::Y).eval(th, y, t);
            let fd_y = (e.eval(th, y + h, t) - e.eval(th, y - h, t)) / (2.0 * h);
            assert!((d_y - fd_y).abs() < 1e-6);
        }
    }

    #[test]
    fn guarded_division() {
        let e: ScalarExpr<f64> = parse_expr("1/y").unwrap();
        assert_eq!(e.eval(0.0, 0.0, 0.0), 0.0);
        assert_eq!(e.eval(0.0, 2.0, 0.0), 0.5);
    }
}
