//! Minimal arithmetic expression language for coefficient fields.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?            right associative
//! atom   := number | var | func '(' expr ')' | '(' expr ')'
//! func   := 'exp' | 'ln'
//! var    := 'x1' | 'x2' | ... | 'x'      ('x' is an alias for 'x1')
//! number := digits ['.' digits] [('e' | 'E') ['+' | '-'] digits]
//! ```
//!
//! `-x^2` parses as `-(x^2)`. The canonical text form produced by
//! [`std::fmt::Display`] parenthesizes every compound subexpression, so
//! printing a parsed expression and parsing it again is the identity on text.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Expression tree. Variables are zero-based (`x1` is `Var(0)`).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Num(v)
    }

    pub fn var(i: usize) -> Self {
        Expr::Var(i)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text).parse_all()
    }

    fn bin(op: BinOp, l: Expr, r: Expr) -> Self {
        Expr::Bin(op, Box::new(l), Box::new(r))
    }

    pub fn add(l: Expr, r: Expr) -> Self {
        Self::bin(BinOp::Add, l, r)
    }
    pub fn sub(l: Expr, r: Expr) -> Self {
        Self::bin(BinOp::Sub, l, r)
    }
    pub fn mul(l: Expr, r: Expr) -> Self {
        Self::bin(BinOp::Mul, l, r)
    }
    pub fn div(l: Expr, r: Expr) -> Self {
        Self::bin(BinOp::Div, l, r)
    }
    pub fn pow(l: Expr, r: Expr) -> Self {
        Self::bin(BinOp::Pow, l, r)
    }
    pub fn exp(e: Expr) -> Self {
        Expr::Call(Func::Exp, Box::new(e))
    }
    pub fn ln(e: Expr) -> Self {
        Expr::Call(Func::Ln, Box::new(e))
    }
    /// Negation; a literal is folded so `-2` and `Num(-2)` coincide.
    pub fn neg(e: Expr) -> Self {
        match e {
            Expr::Num(v) => Expr::Num(-v),
            e => Expr::Neg(Box::new(e)),
        }
    }

    /// Number of variables referenced, i.e. one past the largest index.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Num(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(e) | Expr::Call(_, e) => e.arity(),
            Expr::Bin(_, l, r) => l.arity().max(r.arity()),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    /// Tree-walking evaluation. Variables beyond `x.len()` evaluate to NaN.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => x.get(*i).copied().unwrap_or(f64::NAN),
            Expr::Neg(e) => -e.eval(x),
            Expr::Call(Func::Exp, e) => e.eval(x).exp(),
            Expr::Call(Func::Ln, e) => e.eval(x).ln(),
            Expr::Bin(op, l, r) => {
                let a = l.eval(x);
                match op {
                    BinOp::Add => a + r.eval(x),
                    BinOp::Sub => a - r.eval(x),
                    BinOp::Mul => a * r.eval(x),
                    BinOp::Div => a / r.eval(x),
                    BinOp::Pow => power(a, r, x),
                }
            }
        }
    }

    /// Symbolic partial derivative with respect to variable `var`,
    /// lightly simplified.
    pub fn diff(&self, var: usize) -> Expr {
        use BinOp::*;
        let d = match self {
            Expr::Num(_) => Expr::Num(0.0),
            Expr::Var(i) => Expr::Num(if *i == var { 1.0 } else { 0.0 }),
            Expr::Neg(e) => Expr::neg(e.diff(var)),
            Expr::Call(Func::Exp, e) => Expr::mul(self.clone(), e.diff(var)),
            Expr::Call(Func::Ln, e) => Expr::div(e.diff(var), (**e).clone()),
            Expr::Bin(op, l, r) => {
                let (dl, dr) = (l.diff(var), r.diff(var));
                let (l, r) = ((**l).clone(), (**r).clone());
                match op {
                    Add => Expr::add(dl, dr),
                    Sub => Expr::sub(dl, dr),
                    Mul => Expr::add(Expr::mul(dl, r.clone()), Expr::mul(l, dr)),
                    Div => Expr::div(
                        Expr::sub(Expr::mul(dl, r.clone()), Expr::mul(l, dr)),
                        Expr::pow(r, Expr::Num(2.0)),
                    ),
                    Pow => match r.as_constant() {
                        Some(c) => Expr::mul(
                            Expr::mul(Expr::Num(c), Expr::pow(l, Expr::Num(c - 1.0))),
                            dl,
                        ),
                        None => {
                            // d(u^v) = u^v (v' ln u + v u'/u)
                            let inner = Expr::add(
                                Expr::mul(dr, Expr::ln(l.clone())),
                                Expr::div(Expr::mul(r, dl), l),
                            );
                            Expr::mul(self.clone(), inner)
                        }
                    },
                }
            }
        };
        d.simplify()
    }

    /// Constant folding and identity elimination.
    pub fn simplify(self) -> Expr {
        use BinOp::*;
        match self {
            Expr::Neg(e) => match e.simplify() {
                Expr::Num(v) if v == 0.0 => Expr::Num(0.0),
                Expr::Neg(inner) => *inner,
                s => Expr::neg(s),
            },
            Expr::Call(f, e) => {
                let s = e.simplify();
                if let Expr::Num(v) = s {
                    let folded = match f {
                        Func::Exp => v.exp(),
                        Func::Ln => v.ln(),
                    };
                    if folded.is_finite() {
                        return Expr::Num(folded);
                    }
                }
                Expr::Call(f, Box::new(s))
            }
            Expr::Bin(op, l, r) => {
                let (l, r) = (l.simplify(), r.simplify());
                let (lc, rc) = (l.as_constant(), r.as_constant());
                if let (Some(a), Some(b)) = (lc, rc) {
                    let v = Expr::bin(op, Expr::Num(a), Expr::Num(b)).eval(&[]);
                    if v.is_finite() {
                        return Expr::Num(v);
                    }
                }
                match (op, lc, rc) {
                    (Add, Some(z), _) if z == 0.0 => r,
                    (Add | Sub, _, Some(z)) if z == 0.0 => l,
                    (Sub, Some(z), _) if z == 0.0 => Expr::neg(r).simplify(),
                    (Mul, Some(z), _) | (Mul, _, Some(z)) if z == 0.0 => Expr::Num(0.0),
                    (Mul, Some(o), _) if o == 1.0 => r,
                    (Mul | Div, _, Some(o)) if o == 1.0 => l,
                    (Div, Some(z), _) if z == 0.0 => Expr::Num(0.0),
                    (Pow, _, Some(z)) if z == 0.0 => Expr::Num(1.0),
                    (Pow, _, Some(o)) if o == 1.0 => l,
                    _ => Expr::bin(op, l, r),
                }
            }
            e => e,
        }
    }

    /// Flattens the tree into a postfix program for repeated evaluation.
    pub fn compile(&self) -> CompiledExpr {
        let mut ops = Vec::new();
        let depth = emit(self, &mut ops);
        CompiledExpr { ops, depth }
    }
}

fn power(base: f64, exponent: &Expr, x: &[f64]) -> f64 {
    match exponent {
        Expr::Num(c) if c.fract() == 0.0 && c.abs() < 1024.0 => base.powi(*c as i32),
        e => base.powf(e.eval(x)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Num(f64),
    Var(usize),
    Neg,
    Exp,
    Ln,
    Add,
    Sub,
    Mul,
    Div,
    Powi(i32),
    Pow,
}

fn emit(e: &Expr, ops: &mut Vec<Op>) -> usize {
    match e {
        Expr::Num(v) => {
            ops.push(Op::Num(*v));
            1
        }
        Expr::Var(i) => {
            ops.push(Op::Var(*i));
            1
        }
        Expr::Neg(a) => {
            let d = emit(a, ops);
            ops.push(Op::Neg);
            d
        }
        Expr::Call(f, a) => {
            let d = emit(a, ops);
            ops.push(match f {
                Func::Exp => Op::Exp,
                Func::Ln => Op::Ln,
            });
            d
        }
        Expr::Bin(BinOp::Pow, a, b) if matches!(**b, Expr::Num(c) if c.fract() == 0.0 && c.abs() < 1024.0) =>
        {
            let d = emit(a, ops);
            let c = b.as_constant().unwrap_or(1.0);
            ops.push(Op::Powi(c as i32));
            d
        }
        Expr::Bin(op, a, b) => {
            let da = emit(a, ops);
            let db = emit(b, ops);
            ops.push(match op {
                BinOp::Add => Op::Add,
                BinOp::Sub => Op::Sub,
                BinOp::Mul => Op::Mul,
                BinOp::Div => Op::Div,
                BinOp::Pow => Op::Pow,
            });
            da.max(db + 1)
        }
    }
}

/// Postfix form of an [`Expr`]; evaluation does not recurse or allocate
/// for shallow expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    depth: usize,
}

impl CompiledExpr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.depth <= 16 {
            let mut stack = [0.0f64; 16];
            run(&self.ops, x, &mut stack)
        } else {
            let mut stack = vec![0.0f64; self.depth];
            run(&self.ops, x, &mut stack)
        }
    }
}

fn run(ops: &[Op], x: &[f64], stack: &mut [f64]) -> f64 {
    let mut sp = 0usize;
    for op in ops {
        match *op {
            Op::Num(v) => {
                stack[sp] = v;
                sp += 1;
            }
            Op::Var(i) => {
                stack[sp] = x.get(i).copied().unwrap_or(f64::NAN);
                sp += 1;
            }
            Op::Neg => stack[sp - 1] = -stack[sp - 1],
            Op::Exp => stack[sp - 1] = stack[sp - 1].exp(),
            Op::Ln => stack[sp - 1] = stack[sp - 1].ln(),
            Op::Powi(n) => stack[sp - 1] = stack[sp - 1].powi(n),
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow => {
                let b = stack[sp - 1];
                let a = stack[sp - 2];
                sp -= 1;
                stack[sp - 1] = match *op {
                    Op::Add => a + b,
                    Op::Sub => a - b,
                    Op::Mul => a * b,
                    Op::Div => a / b,
                    _ => a.powf(b),
                };
            }
        }
    }
    stack[0]
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => {
                write!(f, "(-{:?})", -v)
            }
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Call(Func::Exp, e) => write!(f, "exp({e})"),
            Expr::Call(Func::Ln, e) => write!(f, "ln({e})"),
            Expr::Bin(op, l, r) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({l} {sym} {r})")
            }
        }
    }
}

impl FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Expr::parse(s)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Expr::parse(&text).map_err(serde::de::Error::custom)
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { src, pos: 0 }
    }

    fn err<T>(&self, msg: &str) -> Result<T> {
        Err(Error::Expression(format!("{msg} at offset {} in `{}`", self.pos, self.src)))
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek_raw() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek_raw(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.peek_raw()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn parse_all(mut self) -> Result<Expr> {
        if self.peek().is_none() {
            return self.err("empty expression");
        }
        let e = self.expr()?;
        if self.peek().is_some() {
            return self.err("unexpected trailing input");
        }
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::add(lhs, self.term()?);
            } else if self.eat('-') {
                lhs = Expr::sub(lhs, self.term()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expr::mul(lhs, self.unary()?);
            } else if self.eat('/') {
                lhs = Expr::div(lhs, self.unary()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            let exponent = self.unary()?;
            return Ok(Expr::pow(base, exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return self.err("expected `)`");
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while matches!(self.peek_raw(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                    self.pos += 1;
                }
                let ident = &self.src[start..self.pos];
                match ident {
                    "exp" | "ln" => {
                        if !self.eat('(') {
                            return self.err("expected `(` after function name");
                        }
                        let arg = self.expr()?;
                        if !self.eat(')') {
                            return self.err("expected `)`");
                        }
                        let f = if ident == "exp" { Func::Exp } else { Func::Ln };
                        Ok(Expr::Call(f, Box::new(arg)))
                    }
                    "x" => Ok(Expr::Var(0)),
                    _ => match ident.strip_prefix('x').and_then(|n| n.parse::<usize>().ok()) {
                        Some(n) if n >= 1 && !ident[1..].starts_with('0') => Ok(Expr::Var(n - 1)),
                        _ => {
                            self.pos = start;
                            self.err(&format!("unknown identifier `{ident}`"))
                        }
                    },
                }
            }
            Some(_) => self.err("unexpected character"),
            None => self.err("unexpected end of input"),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut i = self.pos;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            if j < bytes.len() && bytes[j].is_ascii_digit() {
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        self.pos = i;
        match self.src[start..i].parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Num(v)),
            _ => {
                self.pos = start;
                self.err("malformed number")
            }
        }
    }
}
