//! Small arithmetic expression language for boundary data and manufactured
//! solutions.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, the functions `sin cos
//! sinh cosh exp`, the constant `pi` and the variables `x y`. Expressions
//! are parsed once into an AST, evaluated at quadrature points, and can be
//! differentiated symbolically (needed to derive sources and flux data from
//! a manufactured primal field).

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("cannot differentiate {0}")]
    NonDifferentiable(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    X,
    Y,
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Sinh(Box<Expr>),
    Cosh(Box<Expr>),
    Exp(Box<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
}

// Smart constructors with constant folding; they keep derivative trees small.
pub fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (Expr::Const(z), b) if z == 0.0 => b,
        (a, Expr::Const(z)) if z == 0.0 => a,
        (a, b) => Expr::Add(Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (a, Expr::Const(z)) if z == 0.0 => a,
        (Expr::Const(z), b) if z == 0.0 => neg(b),
        (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (Expr::Const(z), _) | (_, Expr::Const(z)) if z == 0.0 => Expr::Const(0.0),
        (Expr::Const(o), b) if o == 1.0 => b,
        (a, Expr::Const(o)) if o == 1.0 => a,
        (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) if y != 0.0 => Expr::Const(x / y),
        (a, Expr::Const(o)) if o == 1.0 => a,
        (a, b) => Expr::Div(Box::new(a), Box::new(b)),
    }
}

pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(x) => Expr::Const(-x),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

pub fn scale(c: f64, e: Expr) -> Expr {
    mul(Expr::Const(c), e)
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        Parser::new(src).parse()
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::X => x,
            Expr::Y => y,
            Expr::Add(a, b) => a.eval(x, y) + b.eval(x, y),
            Expr::Sub(a, b) => a.eval(x, y) - b.eval(x, y),
            Expr::Mul(a, b) => a.eval(x, y) * b.eval(x, y),
            Expr::Div(a, b) => a.eval(x, y) / b.eval(x, y),
            Expr::Pow(a, b) => a.eval(x, y).powf(b.eval(x, y)),
            Expr::Neg(a) => -a.eval(x, y),
            Expr::Sin(a) => a.eval(x, y).sin(),
            Expr::Cos(a) => a.eval(x, y).cos(),
            Expr::Sinh(a) => a.eval(x, y).sinh(),
            Expr::Cosh(a) => a.eval(x, y).cosh(),
            Expr::Exp(a) => a.eval(x, y).exp(),
        }
    }

    /// Symbolic partial derivative. Exponents must be constant.
    pub fn diff(&self, var: Var) -> Result<Expr, ExprError> {
        Ok(match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::X => Expr::Const(if var == Var::X { 1.0 } else { 0.0 }),
            Expr::Y => Expr::Const(if var == Var::Y { 1.0 } else { 0.0 }),
            Expr::Add(a, b) => add(a.diff(var)?, b.diff(var)?),
            Expr::Sub(a, b) => sub(a.diff(var)?, b.diff(var)?),
            Expr::Mul(a, b) => add(
                mul(a.diff(var)?, (**b).clone()),
                mul((**a).clone(), b.diff(var)?),
            ),
            Expr::Div(a, b) => div(
                sub(
                    mul(a.diff(var)?, (**b).clone()),
                    mul((**a).clone(), b.diff(var)?),
                ),
                mul((**b).clone(), (**b).clone()),
            ),
            Expr::Pow(a, b) => match **b {
                Expr::Const(p) => mul(
                    scale(p, Expr::Pow(a.clone(), Box::new(Expr::Const(p - 1.0)))),
                    a.diff(var)?,
                ),
                _ => return Err(ExprError::NonDifferentiable(format!("{self}"))),
            },
            Expr::Neg(a) => neg(a.diff(var)?),
            Expr::Sin(a) => mul(Expr::Cos(a.clone()), a.diff(var)?),
            Expr::Cos(a) => neg(mul(Expr::Sin(a.clone()), a.diff(var)?)),
            Expr::Sinh(a) => mul(Expr::Cosh(a.clone()), a.diff(var)?),
            Expr::Cosh(a) => mul(Expr::Sinh(a.clone()), a.diff(var)?),
            Expr::Exp(a) => mul(Expr::Exp(a.clone()), a.diff(var)?),
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::X => write!(f, "x"),
            Expr::Y => write!(f, "y"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Sinh(a) => write!(f, "sinh({a})"),
            Expr::Cosh(a) => write!(f, "cosh({a})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Parse {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn parse(mut self) -> Result<Expr, ExprError> {
        let e = self.expr()?;
        if self.peek().is_some() {
            return self.err("trailing input");
        }
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = add(lhs, self.term()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = mul(lhs, self.unary()?);
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = div(lhs, self.unary()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            // Right associative; exponent may carry its own unary minus.
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return self.err("expected ')'");
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => self.err(format!("unexpected character '{}'", c as char)),
            None => self.err("unexpected end of input"),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
        {
            self.pos += 1;
        }
        // Exponent suffix: 1e-3, 2.5E4
        if self.pos < self.src.len() && (self.src[self.pos] | 0x20) == b'e' {
            let mut p = self.pos + 1;
            if p < self.src.len() && (self.src[p] == b'+' || self.src[p] == b'-') {
                p += 1;
            }
            if p < self.src.len() && self.src[p].is_ascii_digit() {
                self.pos = p;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match text.parse::<f64>() {
            Ok(v) => Ok(Expr::Const(v)),
            Err(_) => self.err(format!("invalid number '{text}'")),
        }
    }

    fn ident(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match name {
            "x" => Ok(Expr::X),
            "y" => Ok(Expr::Y),
            "pi" => Ok(Expr::Const(std::f64::consts::PI)),
            "sin" | "cos" | "sinh" | "cosh" | "exp" => {
                if self.peek() != Some(b'(') {
                    return self.err(format!("expected '(' after {name}"));
                }
                self.pos += 1;
                let arg = self.expr()?;
                if self.peek() != Some(b')') {
                    return self.err("expected ')'");
                }
                self.pos += 1;
                Ok(match name {
                    "sin" => Expr::Sin(Box::new(arg)),
                    "cos" => Expr::Cos(Box::new(arg)),
                    "sinh" => Expr::Sinh(Box::new(arg)),
                    "cosh" => Expr::Cosh(Box::new(arg)),
                    _ => Expr::Exp(Box::new(arg)),
                })
            }
            _ => self.err(format!("unknown identifier '{name}'")),
        }
    }
}
