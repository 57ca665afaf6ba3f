//! Scalar expression trees for problem coefficients.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?
//! primary := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Identifiers `x1..xn` are state coordinates, `a1..ad` control coordinates,
//! `pi` is built in, and anything else must be a named constant supplied at
//! parse time. Functions: `exp`, `log`, `abs`, `pos` (positive part),
//! `max`, `min`, `pow`.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Exp,
    Log,
    Abs,
    Pos,
    Max,
    Min,
    Pow,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "exp" => (Func::Exp, 1),
            "log" => (Func::Log, 1),
            "abs" => (Func::Abs, 1),
            "pos" => (Func::Pos, 1),
            "max" => (Func::Max, 2),
            "min" => (Func::Min, 2),
            "pow" => (Func::Pow, 2),
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    State(usize),
    Control(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression together with its source text.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
    max_state: usize,
    max_control: usize,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl serde::Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

pub type Constants = BTreeMap<String, f64>;

impl Expr {
    pub fn parse(source: &str, constants: &Constants) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut p = Parser { tokens: &tokens, pos: 0, constants, max_state: 0, max_control: 0 };
        let root = p.expr()?;
        if p.pos != tokens.len() {
            return Err(Error::Expression(format!("trailing input in `{source}`")));
        }
        Ok(Expr { source: source.to_string(), root, max_state: p.max_state, max_control: p.max_control })
    }

    pub fn constant(c: f64) -> Self {
        Expr { source: format!("{c:?}"), root: Node::Num(c), max_state: 0, max_control: 0 }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Largest state index referenced (`x3` gives 3), 0 if none.
    pub fn max_state_index(&self) -> usize {
        self.max_state
    }

    pub fn max_control_index(&self) -> usize {
        self.max_control
    }

    pub fn is_constant(&self) -> bool {
        self.max_state == 0 && self.max_control == 0
    }

    pub fn eval(&self, x: &[f64], a: &[f64]) -> Result<f64> {
        let v = eval(&self.root, x, a)?;
        if !v.is_finite() {
            return Err(Error::Expression(format!("`{}` evaluates to {v} at x={x:?}, a={a:?}", self.source)));
        }
        Ok(v)
    }

    /// Value and directional derivative along `dx` (controls held fixed).
    ///
    /// Fails with [`Error::NotDifferentiable`] when a kink of `abs`, `pos`,
    /// `max` or `min` sits exactly at `x` and the direction crosses it.
    pub fn eval_directional(&self, x: &[f64], dx: &[f64], a: &[f64]) -> Result<(f64, f64)> {
        match dual(&self.root, x, dx, a) {
            Ok((v, d)) if v.is_finite() && d.is_finite() => Ok((v, d)),
            Ok((v, d)) => {
                Err(Error::Expression(format!("`{}` gives value {v}, derivative {d} at x={x:?}", self.source)))
            }
            Err(DualError::Kink) => Err(Error::NotDifferentiable { expr: self.source.clone(), point: x.to_vec() }),
            Err(DualError::Eval(e)) => Err(e),
        }
    }
}

fn eval(node: &Node, x: &[f64], a: &[f64]) -> Result<f64> {
    Ok(match node {
        Node::Num(c) => *c,
        Node::State(i) => {
            *x.get(*i).ok_or_else(|| Error::Expression(format!("x{} out of range (n = {})", i + 1, x.len())))?
        }
        Node::Control(i) => {
            *a.get(*i).ok_or_else(|| Error::Expression(format!("a{} out of range (d = {})", i + 1, a.len())))?
        }
        Node::Neg(u) => -eval(u, x, a)?,
        Node::Bin(op, l, r) => {
            let (u, v) = (eval(l, x, a)?, eval(r, x, a)?);
            match op {
                BinOp::Add => u + v,
                BinOp::Sub => u - v,
                BinOp::Mul => u * v,
                BinOp::Div => u / v,
                BinOp::Pow => power(u, v),
            }
        }
        Node::Call(f, args) => {
            let u = eval(&args[0], x, a)?;
            match f {
                Func::Exp => u.exp(),
                Func::Log => {
                    if u <= 0.0 {
                        return Err(Error::Expression(format!("log of non-positive value {u}")));
                    }
                    u.ln()
                }
                Func::Abs => u.abs(),
                Func::Pos => u.max(0.0),
                Func::Max => u.max(eval(&args[1], x, a)?),
                Func::Min => u.min(eval(&args[1], x, a)?),
                Func::Pow => power(u, eval(&args[1], x, a)?),
            }
        }
    })
}

fn power(u: f64, v: f64) -> f64 {
    if v.fract() == 0.0 && v.abs() < i32::MAX as f64 {
        u.powi(v as i32)
    } else {
        u.powf(v)
    }
}

enum DualError {
    Kink,
    Eval(Error),
}

impl From<Error> for DualError {
    fn from(e: Error) -> Self {
        DualError::Eval(e)
    }
}

fn at_kink(u: f64, v: f64) -> bool {
    (u - v).abs() <= 1e-12 * (1.0 + u.abs().max(v.abs()))
}

fn dual(node: &Node, x: &[f64], dx: &[f64], a: &[f64]) -> std::result::Result<(f64, f64), DualError> {
    Ok(match node {
        Node::Num(c) => (*c, 0.0),
        Node::State(i) => (eval(node, x, a)?, dx.get(*i).copied().unwrap_or(0.0)),
        Node::Control(_) => (eval(node, x, a)?, 0.0),
        Node::Neg(u) => {
            let (v, d) = dual(u, x, dx, a)?;
            (-v, -d)
        }
        Node::Bin(op, l, r) => {
            let (u, du) = dual(l, x, dx, a)?;
            let (v, dv) = dual(r, x, dx, a)?;
            match op {
                BinOp::Add => (u + v, du + dv),
                BinOp::Sub => (u - v, du - dv),
                BinOp::Mul => (u * v, du * v + u * dv),
                BinOp::Div => (u / v, (du * v - u * dv) / (v * v)),
                BinOp::Pow => dual_pow(u, du, v, dv),
            }
        }
        Node::Call(f, args) => {
            let (u, du) = dual(&args[0], x, dx, a)?;
            match f {
                Func::Exp => (u.exp(), u.exp() * du),
                Func::Log => {
                    if u <= 0.0 {
                        return Err(Error::Expression(format!("log of non-positive value {u}")).into());
                    }
                    (u.ln(), du / u)
                }
                Func::Abs => {
                    if at_kink(u, 0.0) {
                        if du != 0.0 {
                            return Err(DualError::Kink);
                        }
                        (u.abs(), 0.0)
                    } else {
                        (u.abs(), u.signum() * du)
                    }
                }
                Func::Pos => {
                    if at_kink(u, 0.0) {
                        if du != 0.0 {
                            return Err(DualError::Kink);
                        }
                        (u.max(0.0), 0.0)
                    } else if u > 0.0 {
                        (u, du)
                    } else {
                        (0.0, 0.0)
                    }
                }
                Func::Max | Func::Min => {
                    let (v, dv) = dual(&args[1], x, dx, a)?;
                    if at_kink(u, v) {
                        if du != dv {
                            return Err(DualError::Kink);
                        }
                        (if *f == Func::Max { u.max(v) } else { u.min(v) }, du)
                    } else if (u > v) == (*f == Func::Max) {
                        (u, du)
                    } else {
                        (v, dv)
                    }
                }
                Func::Pow => {
                    let (v, dv) = dual(&args[1], x, dx, a)?;
                    dual_pow(u, du, v, dv)
                }
            }
        }
    })
}

fn dual_pow(u: f64, du: f64, v: f64, dv: f64) -> (f64, f64) {
    let val = power(u, v);
    let d_base = if du == 0.0 { 0.0 } else { v * power(u, v - 1.0) * du };
    let d_exp = if dv == 0.0 { 0.0 } else { val * u.ln() * dv };
    (val, d_base + d_exp)
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
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
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| Error::Expression(format!("bad number `{text}` in `{src}`")))?;
            out.push(Token::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else {
            return Err(Error::Expression(format!("unexpected character `{c}` in `{src}`")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    constants: &'a Constants,
    max_state: usize,
    max_control: usize,
}

impl Parser<'_> {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Token::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Expression(format!("expected `{op}` at token {}", self.pos)))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if op == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if op == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.primary()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node> {
        let tok = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| Error::Expression("unexpected end of expression".into()))?;
        self.pos += 1;
        match tok {
            Token::Num(v) => Ok(Node::Num(v)),
            Token::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Token::Op(c) => Err(Error::Expression(format!("unexpected `{c}`"))),
            Token::Ident(name) => {
                if self.peek_op() == Some('(') {
                    let (func, arity) =
                        Func::lookup(&name).ok_or_else(|| Error::Expression(format!("unknown function `{name}`")))?;
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.peek_op() == Some(',') {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(')')?;
                    if args.len() != arity {
                        return Err(Error::Expression(format!(
                            "`{name}` takes {arity} argument(s), got {}",
                            args.len()
                        )));
                    }
                    return Ok(Node::Call(func, args));
                }
                if let Some(idx) = variable_index(&name, 'x') {
                    self.max_state = self.max_state.max(idx + 1);
                    return Ok(Node::State(idx));
                }
                if let Some(idx) = variable_index(&name, 'a') {
                    self.max_control = self.max_control.max(idx + 1);
                    return Ok(Node::Control(idx));
                }
                if let Some(v) = self.constants.get(&name) {
                    return Ok(Node::Num(*v));
                }
                if name == "pi" {
                    return Ok(Node::Num(std::f64::consts::PI));
                }
                Err(Error::Expression(format!("unknown identifier `{name}`")))
            }
        }
    }
}

/// True for reserved names of the form `x<k>` or `a<k>`.
pub fn is_variable_name(name: &str) -> bool {
    variable_index(name, 'x').is_some() || variable_index(name, 'a').is_some()
}

fn variable_index(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    let k: usize = rest.parse().ok()?;
    if k == 0 || rest.starts_with('0') {
        return None;
    }
    Some(k - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        let mut c = Constants::new();
        c.insert("K".into(), 1.0);
        c.insert("mu".into(), 0.05);
        Expr::parse(s, &c).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(p("1 + 2 * 3").eval(&[], &[]).unwrap(), 7.0);
        assert_eq!(p("-2^2").eval(&[], &[]).unwrap(), -4.0);
        assert_eq!(p("2^3^2").eval(&[], &[]).unwrap(), 512.0);
        assert_eq!(p("(1 - 2) - 3").eval(&[], &[]).unwrap(), -4.0);
        assert_eq!(p("8 / 2 / 2").eval(&[], &[]).unwrap(), 2.0);
        assert_eq!(p("1.5e-1 * 2E1").eval(&[], &[]).unwrap(), 3.0);
    }

    #[test]
    fn variables_constants_functions() {
        let e = p("pos(K - x1 - x2) + mu * a1 + max(x1, x2) - min(x1, 0) + abs(-x2)");
        assert_eq!(e.max_state_index(), 2);
        assert_eq!(e.max_control_index(), 1);
        let v = e.eval(&[0.25, 0.5], &[2.0]).unwrap();
        assert!((v - (0.25 + 0.1 + 0.5 - 0.0 + 0.5)).abs() < 1e-15);
        assert!((p("exp(log(3))").eval(&[], &[]).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(p("pow(x1, 2)").eval(&[3.0], &[]).unwrap(), 9.0);
    }

    #[test]
    fn errors_are_reported() {
        let c = Constants::new();
        assert!(Expr::parse("x1 +", &c).is_err());
        assert!(Expr::parse("foo(1)", &c).is_err());
        assert!(Expr::parse("bar", &c).is_err());
        assert!(Expr::parse("max(1)", &c).is_err());
        assert!(Expr::parse("x0", &c).is_err());
        assert!(Expr::parse("1 $ 2", &c).is_err());
        assert!(p("log(x1)").eval(&[-1.0], &[]).is_err());
        assert!(p("x3").eval(&[1.0], &[]).is_err());
        assert!(p("1 / x1").eval(&[0.0], &[]).is_err());
    }

    #[test]
    fn directional_derivatives() {
        let e = p("x1^2 * x2 + exp(x2)");
        let (v, d) = e.eval_directional(&[1.0, 0.0], &[1.0, 0.0], &[]).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(d, 0.0);
        let (_, d) = e.eval_directional(&[1.0, 0.0], &[0.0, 1.0], &[]).unwrap();
        assert!((d - 2.0).abs() < 1e-15);
        let put = p("pos(K - x1)");
        assert_eq!(put.eval_directional(&[0.5], &[1.0], &[]).unwrap().1, -1.0);
        assert_eq!(put.eval_directional(&[2.0], &[1.0], &[]).unwrap().1, 0.0);
        assert!(matches!(put.eval_directional(&[1.0], &[1.0], &[]), Err(Error::NotDifferentiable { .. })));
    }

    #[test]
    fn kink_invisible_along_tangent_direction() {
        let e = p("pos(1 + 0.3 * abs(x2) - x1)");
        let (_, d) = e.eval_directional(&[0.5, 0.0], &[1.0, 0.0], &[]).unwrap();
        assert_eq!(d, -1.0);
        assert!(e.eval_directional(&[0.5, 0.0], &[0.0, 1.0], &[]).is_err());
    }
}
