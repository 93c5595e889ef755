//! Closed-form scalar fields of a point `x in R^d`.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! cmp     := sum (('<' | '<=' | '>' | '>=') sum)?
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | 'pi' | 'x' | 'x1'..'xd' | '|' cmp '|' | '(' cmp ')'
//!          | name '(' cmp (',' cmp)* ')'
//! ```
//!
//! Functions: `abs exp ln sqrt sin cos min max piecewise`. Comparisons give
//! 1 or 0; `piecewise(c1, v1, c2, v2, ..., default)` returns the first `vi`
//! whose `ci` is nonzero. Bare `x` is `x1` in one dimension; `|x|` and
//! `abs(x)` are the Euclidean norm in any dimension.

use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("column {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("{0}")]
    Eval(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Abs,
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Min,
    Max,
    Piecewise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Point,
    Coord(usize),
    Neg(Box<Node>),
    Bin(Bin, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression; evaluation never reparses.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
    max_coord: usize,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let mut p = Parser { s: src.as_bytes(), i: 0, max_coord: 0 };
        let root = p.cmp()?;
        p.ws();
        if p.i < p.s.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(Self {
            source: src.to_string(),
            root,
            max_coord: p.max_coord,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Checks that every coordinate reference exists in dimension `d`.
    pub fn check_dim(&self, d: usize) -> Result<(), ExprError> {
        if self.max_coord > d {
            return Err(ExprError::Eval(format!("x{} used in dimension {d}", self.max_coord)));
        }
        if d > 1 && uses_bare_point(&self.root) {
            return Err(ExprError::Eval(format!(
                "bare `x` outside |x| or abs(x) is ambiguous in dimension {d}; use x1..x{d}"
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        let v = eval(&self.root, x)?;
        if v.is_nan() {
            return Err(ExprError::Eval(format!("`{}` is NaN at {x:?}", self.source)));
        }
        Ok(v)
    }
}

fn uses_bare_point(n: &Node) -> bool {
    match n {
        Node::Point => true,
        Node::Call(Func::Abs, args) if matches!(args.as_slice(), [Node::Point]) => false,
        Node::Neg(a) => uses_bare_point(a),
        Node::Bin(_, a, b) => uses_bare_point(a) || uses_bare_point(b),
        Node::Call(_, args) => args.iter().any(uses_bare_point),
        _ => false,
    }
}

fn eval(n: &Node, x: &[f64]) -> Result<f64, ExprError> {
    Ok(match n {
        Node::Num(v) => *v,
        Node::Point => {
            if x.len() != 1 {
                return Err(ExprError::Eval(format!("bare `x` in dimension {}", x.len())));
            }
            x[0]
        }
        Node::Coord(i) => *x
            .get(i - 1)
            .ok_or_else(|| ExprError::Eval(format!("x{i} used in dimension {}", x.len())))?,
        Node::Neg(a) => -eval(a, x)?,
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, x)?, eval(b, x)?);
            match op {
                Bin::Add => a + b,
                Bin::Sub => a - b,
                Bin::Mul => a * b,
                Bin::Div => a / b,
                Bin::Pow => a.powf(b),
                Bin::Lt => (a < b) as u8 as f64,
                Bin::Le => (a <= b) as u8 as f64,
                Bin::Gt => (a > b) as u8 as f64,
                Bin::Ge => (a >= b) as u8 as f64,
            }
        }
        Node::Call(Func::Abs, args) if matches!(args.as_slice(), [Node::Point]) => {
            x.iter().map(|v| v * v).sum::<f64>().sqrt()
        }
        Node::Call(Func::Piecewise, args) => {
            let mut it = args.chunks_exact(2);
            for pair in it.by_ref() {
                if eval(&pair[0], x)? != 0.0 {
                    return eval(&pair[1], x);
                }
            }
            eval(&it.remainder()[0], x)?
        }
        Node::Call(f, args) => {
            let vals = args.iter().map(|a| eval(a, x)).collect::<Result<Vec<_>, _>>()?;
            match f {
                Func::Abs => vals[0].abs(),
                Func::Exp => vals[0].exp(),
                Func::Ln => vals[0].ln(),
                Func::Sqrt => vals[0].sqrt(),
                Func::Sin => vals[0].sin(),
                Func::Cos => vals[0].cos(),
                Func::Min => vals.iter().cloned().fold(f64::INFINITY, f64::min),
                Func::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                Func::Piecewise => unreachable!(),
            }
        }
    })
}

struct Parser<'a> {
    s: &'a [u8],
    i: usize,
    max_coord: usize,
}

impl Parser<'_> {
    fn err(&self, msg: impl Into<String>) -> ExprError {
        ExprError::Parse {
            pos: self.i + 1,
            msg: msg.into(),
        }
    }

    fn ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.s.get(self.i).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{}`", c as char)))
        }
    }

    fn cmp(&mut self) -> Result<Node, ExprError> {
        let lhs = self.sum()?;
        let op = match self.peek() {
            Some(b'<') => Bin::Lt,
            Some(b'>') => Bin::Gt,
            _ => return Ok(lhs),
        };
        self.i += 1;
        let op = match (op, self.s.get(self.i)) {
            (Bin::Lt, Some(b'=')) => {
                self.i += 1;
                Bin::Le
            }
            (Bin::Gt, Some(b'=')) => {
                self.i += 1;
                Bin::Ge
            }
            _ => op,
        };
        let rhs = self.sum()?;
        Ok(Node::Bin(op, Box::new(lhs), Box::new(rhs)))
    }

    fn sum(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => Bin::Add,
                Some(b'-') => Bin::Sub,
                _ => return Ok(lhs),
            };
            self.i += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.product()?));
        }
    }

    fn product(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => Bin::Mul,
                Some(b'/') => Bin::Div,
                _ => return Ok(lhs),
            };
            self.i += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Node::Bin(Bin::Pow, Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            None => Err(self.err("unexpected end of expression")),
            Some(b'(') => {
                self.i += 1;
                let e = self.cmp()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(b'|') => {
                self.i += 1;
                let e = self.cmp()?;
                self.expect(b'|')?;
                Ok(Node::Call(Func::Abs, vec![e]))
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.name(),
            Some(c) => Err(self.err(format!("unexpected `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.i;
        let s = self.s;
        let digits = |i: &mut usize| {
            while *i < s.len() && s[*i].is_ascii_digit() {
                *i += 1;
            }
        };
        digits(&mut self.i);
        if self.s.get(self.i) == Some(&b'.') {
            self.i += 1;
            digits(&mut self.i);
        }
        if matches!(self.s.get(self.i), Some(b'e' | b'E')) {
            let save = self.i;
            self.i += 1;
            if matches!(self.s.get(self.i), Some(b'+' | b'-')) {
                self.i += 1;
            }
            let exp_start = self.i;
            digits(&mut self.i);
            if self.i == exp_start {
                self.i = save;
            }
        }
        let text = std::str::from_utf8(&self.s[start..self.i]).expect("ascii");
        text.parse::<f64>().map(Node::Num).map_err(|_| ExprError::Parse {
            pos: start + 1,
            msg: format!("malformed number `{text}`"),
        })
    }

    fn name(&mut self) -> Result<Node, ExprError> {
        let start = self.i;
        while self.i < self.s.len() && (self.s[self.i].is_ascii_alphanumeric() || self.s[self.i] == b'_') {
            self.i += 1;
        }
        let word = std::str::from_utf8(&self.s[start..self.i]).expect("ascii");
        let at = |msg: String| ExprError::Parse { pos: start + 1, msg };
        match word {
            "x" => return Ok(Node::Point),
            "pi" => return Ok(Node::Num(std::f64::consts::PI)),
            _ => {}
        }
        if let Some(idx) = word.strip_prefix('x') {
            let k: usize = idx.parse().map_err(|_| at(format!("unknown name `{word}`")))?;
            if k == 0 {
                return Err(at("coordinates start at x1".into()));
            }
            self.max_coord = self.max_coord.max(k);
            return Ok(Node::Coord(k));
        }
        let (f, arity) = match word {
            "abs" => (Func::Abs, Some(1)),
            "exp" => (Func::Exp, Some(1)),
            "ln" => (Func::Ln, Some(1)),
            "sqrt" => (Func::Sqrt, Some(1)),
            "sin" => (Func::Sin, Some(1)),
            "cos" => (Func::Cos, Some(1)),
            "min" => (Func::Min, None),
            "max" => (Func::Max, None),
            "piecewise" => (Func::Piecewise, None),
            _ => return Err(at(format!("unknown name `{word}`"))),
        };
        self.expect(b'(')?;
        let mut args = vec![self.cmp()?];
        while self.eat(b',') {
            args.push(self.cmp()?);
        }
        self.expect(b')')?;
        let ok = match f {
            Func::Min | Func::Max => !args.is_empty(),
            Func::Piecewise => args.len() % 2 == 1,
            _ => args.len() == arity.unwrap(),
        };
        if !ok {
            let want = match f {
                Func::Piecewise => "an odd number of arguments (condition/value pairs and a default)".to_string(),
                _ => format!("{} argument(s)", arity.unwrap_or(1)),
            };
            return Err(at(format!("`{word}` takes {want}, got {}", args.len())));
        }
        Ok(Node::Call(f, args))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: &[f64]) -> f64 {
        Expr::parse(s).unwrap().eval(x).unwrap()
    }

    #[test]
    fn documented_examples() {
        assert_eq!(ev("1 - x1^2", &[0.5]), 0.75);
        assert_eq!(ev("exp(-abs(x))", &[0.0]), 1.0);
        assert_eq!(ev("min(1, |x|)", &[3.0, 4.0]), 1.0);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("-2^2", &[0.0]), -4.0);
        assert_eq!(ev("2^3^2", &[0.0]), 512.0);
        assert_eq!(ev("2^-1", &[0.0]), 0.5);
        assert_eq!(ev("8 / 2 / 2", &[0.0]), 2.0);
        assert_eq!(ev("1 - 2 - 3", &[0.0]), -4.0);
        assert_eq!(ev("1.5e1 + .5", &[0.0]), 15.5);
        assert_eq!(ev("||x| - 3|", &[1.0]), 2.0);
    }

    #[test]
    fn piecewise_takes_the_first_true_branch() {
        let e = Expr::parse("piecewise(x1 < 0, -1, x1 <= 1, 0, 1)").unwrap();
        assert_eq!(e.eval(&[-0.5]).unwrap(), -1.0);
        assert_eq!(e.eval(&[1.0]).unwrap(), 0.0);
        assert_eq!(e.eval(&[2.0]).unwrap(), 1.0);
    }

    #[test]
    fn parse_errors_carry_positions() {
        match Expr::parse("1 + * 2") {
            Err(ExprError::Parse { pos, .. }) => assert_eq!(pos, 5),
            other => panic!("{other:?}"),
        }
        match Expr::parse("foo(1)") {
            Err(ExprError::Parse { pos, .. }) => assert_eq!(pos, 1),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("min()").is_err());
        assert!(Expr::parse("piecewise(1, 2)").is_err());
        assert!(Expr::parse("x0").is_err());
    }

    #[test]
    fn nan_is_an_evaluation_error() {
        let e = Expr::parse("sqrt(x1)").unwrap();
        assert!(e.eval(&[-1.0]).is_err());
        assert!(e.eval(&[4.0]).is_ok());
    }

    #[test]
    fn dimension_checks() {
        assert!(Expr::parse("x3").unwrap().check_dim(2).is_err());
        assert!(Expr::parse("x + 1").unwrap().check_dim(2).is_err());
        assert!(Expr::parse("|x| + x2").unwrap().check_dim(2).is_ok());
        assert!(Expr::parse("x + 1").unwrap().check_dim(1).is_ok());
    }
}
