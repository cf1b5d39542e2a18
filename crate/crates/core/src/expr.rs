//! Scalar coefficient expressions.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | base ('^' number)?
//! base   := number | 'x' | 'y' | 'pi'
//!         | func '(' expr ')' | ('min' | 'max') '(' expr ',' expr ')' | '(' expr ')'
//! func   := 'sin' | 'cos' | 'exp' | 'abs'
//! ```

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    X,
    Y,
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Pow(Box<Node>, f64),
    Call(Func, Box<Node>),
    Min(Box<Node>, Box<Node>),
    Max(Box<Node>, Box<Node>),
}

impl Node {
    fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::X => x,
            Node::Y => y,
            Node::Neg(a) => -a.eval(x, y),
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(x, y), b.eval(x, y));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Node::Pow(a, e) => {
                let base = a.eval(x, y);
                if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
                    base.powi(*e as i32)
                } else {
                    base.powf(*e)
                }
            }
            Node::Call(f, a) => {
                let a = a.eval(x, y);
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Abs => a.abs(),
                }
            }
            Node::Min(a, b) => a.eval(x, y).min(b.eval(x, y)),
            Node::Max(a, b) => a.eval(x, y).max(b.eval(x, y)),
        }
    }

    fn uses_y(&self) -> bool {
        match self {
            Node::Y => true,
            Node::Num(_) | Node::X => false,
            Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => a.uses_y(),
            Node::Bin(_, a, b) | Node::Min(a, b) | Node::Max(a, b) => a.uses_y() || b.uses_y(),
        }
    }

    fn constant(&self) -> Option<f64> {
        match self {
            Node::Num(v) => Some(*v),
            Node::X | Node::Y => None,
            Node::Neg(a) => a.constant().map(|v| -v),
            _ => {
                if self.has_var() {
                    None
                } else {
                    Some(self.eval(0.0, 0.0))
                }
            }
        }
    }

    fn has_var(&self) -> bool {
        match self {
            Node::X | Node::Y => true,
            Node::Num(_) => false,
            Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => a.has_var(),
            Node::Bin(_, a, b) | Node::Min(a, b) | Node::Max(a, b) => a.has_var() || b.has_var(),
        }
    }
}

/// A parsed scalar expression in `x` and `y`, keeping its source text.
#[derive(Debug, Clone)]
pub struct ScalarExpr {
    source: String,
    root: Node,
}

impl PartialEq for ScalarExpr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl ScalarExpr {
    pub fn parse(source: &str) -> Result<Self> {
        let mut p = Parser { src: source, chars: source.char_indices().collect(), pos: 0 };
        let root = p.expr()?;
        p.skip_ws();
        if let Some(&(off, c)) = p.chars.get(p.pos) {
            return Err(p.error(off, format!("unexpected character '{c}'")));
        }
        Ok(Self { source: source.trim().to_string(), root })
    }

    pub fn constant(value: f64) -> Self {
        Self { source: format_constant(value), root: Node::Num(value) }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Raw evaluation; may return a non-finite value.
    pub fn eval_raw(&self, point: &[f64]) -> f64 {
        let x = point.first().copied().unwrap_or(0.0);
        let y = point.get(1).copied().unwrap_or(0.0);
        self.root.eval(x, y)
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        let v = self.eval_raw(point);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation { expr: self.source.clone(), point: point.to_vec(), value: v })
        }
    }

    pub fn uses_y(&self) -> bool {
        self.root.uses_y()
    }

    /// Value of the expression when it does not depend on `x` or `y`.
    pub fn as_constant(&self) -> Option<f64> {
        self.root.constant()
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }
}

/// Formats a float so that parsing it back yields the same value.
pub fn format_constant(value: f64) -> String {
    if value < 0.0 {
        format!("-{:e}", -value)
    } else {
        format!("{value:e}")
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Serialize for ScalarExpr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

struct Parser<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, offset: usize, message: String) -> Error {
        Error::Parse { expr: self.src.to_string(), column: offset + 1, message }
    }

    fn here(&self) -> usize {
        self.chars.get(self.pos).map(|&(o, _)| o).unwrap_or(self.src.len())
    }

    fn skip_ws(&mut self) {
        while matches!(self.chars.get(self.pos), Some((_, c)) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn expect(&mut self, want: char) -> Result<()> {
        match self.peek() {
            Some(c) if c == want => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(self.error(self.here(), format!("expected '{want}', found '{c}'"))),
            None => Err(self.error(self.here(), format!("expected '{want}', found end of input"))),
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some('+') => BinOp::Add,
                Some('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some('*') => BinOp::Mul,
                Some('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Node> {
        if self.peek() == Some('-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.factor()?)));
        }
        let base = self.base()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            let negative = if self.peek() == Some('-') {
                self.pos += 1;
                true
            } else {
                false
            };
            let start = self.here();
            let e = self.number().ok_or_else(|| self.error(start, "exponent must be a number".into()))?;
            return Ok(Node::Pow(Box::new(base), if negative { -e } else { e }));
        }
        Ok(base)
    }

    fn number(&mut self) -> Option<f64> {
        self.skip_ws();
        let start = self.pos;
        let mut end = self.pos;
        let mut seen_digit = false;
        while let Some(&(_, c)) = self.chars.get(end) {
            if c.is_ascii_digit() {
                seen_digit = true;
                end += 1;
            } else if c == '.' {
                end += 1;
            } else {
                break;
            }
        }
        if !seen_digit {
            return None;
        }
        // optional exponent part
        if let Some(&(_, c)) = self.chars.get(end) {
            if c == 'e' || c == 'E' {
                let mut k = end + 1;
                if matches!(self.chars.get(k), Some((_, '+' | '-'))) {
                    k += 1;
                }
                if matches!(self.chars.get(k), Some((_, d)) if d.is_ascii_digit()) {
                    while matches!(self.chars.get(k), Some((_, d)) if d.is_ascii_digit()) {
                        k += 1;
                    }
                    end = k;
                }
            }
        }
        let from = self.chars[start].0;
        let to = self.chars.get(end).map(|&(o, _)| o).unwrap_or(self.src.len());
        let v = self.src[from..to].parse::<f64>().ok()?;
        self.pos = end;
        Some(v)
    }

    fn ident(&mut self) -> String {
        let mut s = String::new();
        while let Some(&(_, c)) = self.chars.get(self.pos) {
            if c.is_ascii_alphabetic() {
                s.push(c);
                self.pos += 1;
            } else {
                break;
            }
        }
        s
    }

    fn base(&mut self) -> Result<Node> {
        let start = self.here();
        match self.peek() {
            None => Err(self.error(start, "unexpected end of input".into())),
            Some('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                self.number().map(Node::Num).ok_or_else(|| self.error(start, "malformed number".into()))
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let name = self.ident();
                match name.as_str() {
                    "x" => Ok(Node::X),
                    "y" => Ok(Node::Y),
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "sin" | "cos" | "exp" | "abs" => {
                        let f = match name.as_str() {
                            "sin" => Func::Sin,
                            "cos" => Func::Cos,
                            "exp" => Func::Exp,
                            _ => Func::Abs,
                        };
                        self.expect('(')?;
                        let arg = self.expr()?;
                        self.expect(')')?;
                        Ok(Node::Call(f, Box::new(arg)))
                    }
                    "min" | "max" => {
                        self.expect('(')?;
                        let a = self.expr()?;
                        self.expect(',')?;
                        let b = self.expr()?;
                        self.expect(')')?;
                        Ok(if name == "min" {
                            Node::Min(Box::new(a), Box::new(b))
                        } else {
                            Node::Max(Box::new(a), Box::new(b))
                        })
                    }
                    _ => Err(self.error(start, format!("unknown identifier '{name}'"))),
                }
            }
            Some(c) => Err(self.error(start, format!("unexpected character '{c}'"))),
        }
    }
}
