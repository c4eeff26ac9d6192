//! Fully parenthesized integer arithmetic.
//!
//! Grammar: `expr := int | "(" expr op expr ")"`, `op := "+" | "-" | "*"`,
//! `int := "-"? digit+`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "-")]
    Sub,
    #[serde(rename = "*")]
    Mul,
}

impl Op {
    pub fn symbol(self) -> char {
        match self {
            Op::Add => '+',
            Op::Sub => '-',
            Op::Mul => '*',
        }
    }

    pub fn from_symbol(c: char) -> Option<Op> {
        match c {
            '+' => Some(Op::Add),
            '-' => Some(Op::Sub),
            '*' => Some(Op::Mul),
            _ => None,
        }
    }

    pub fn apply(self, a: i64, b: i64) -> Option<i64> {
        match self {
            Op::Add => a.checked_add(b),
            Op::Sub => a.checked_sub(b),
            Op::Mul => a.checked_mul(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Lit(i64),
    Bin(Box<Expr>, Op, Box<Expr>),
}

/// One line of a worked solution: `lhs op rhs = result`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reduction {
    pub lhs: i64,
    pub op: Op,
    pub rhs: i64,
    pub result: i64,
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}={}", self.lhs, self.op.symbol(), self.rhs, self.result)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Bin(l, op, r) => write!(f, "({l}{}{r})", op.symbol()),
        }
    }
}

impl Expr {
    pub fn parse(text: &str) -> Option<Expr> {
        let bytes = text.as_bytes();
        let mut pos = 0;
        let expr = parse_expr(bytes, &mut pos)?;
        (pos == bytes.len()).then_some(expr)
    }

    pub fn n_ops(&self) -> usize {
        match self {
            Expr::Lit(_) => 0,
            Expr::Bin(l, _, r) => 1 + l.n_ops() + r.n_ops(),
        }
    }

    /// Checked evaluation; `None` on overflow.
    pub fn eval(&self) -> Option<i64> {
        match self {
            Expr::Lit(v) => Some(*v),
            Expr::Bin(l, op, r) => op.apply(l.eval()?, r.eval()?),
        }
    }

    /// Reductions in solving order: innermost first, left to right (post-order).
    pub fn reductions(&self) -> Option<Vec<Reduction>> {
        fn walk(e: &Expr, out: &mut Vec<Reduction>) -> Option<i64> {
            match e {
                Expr::Lit(v) => Some(*v),
                Expr::Bin(l, op, r) => {
                    let lhs = walk(l, out)?;
                    let rhs = walk(r, out)?;
                    let result = op.apply(lhs, rhs)?;
                    out.push(Reduction {
                        lhs,
                        op: *op,
                        rhs,
                        result,
                    });
                    Some(result)
                }
            }
        }
        let mut out = Vec::with_capacity(self.n_ops());
        walk(self, &mut out)?;
        Some(out)
    }

    /// Replaces the leftmost node `(lhs op rhs)` whose children are both
    /// literals with the given values by `Lit(result)`. Returns false when no
    /// such node exists.
    pub fn reduce_matching(&mut self, lhs: i64, op: Op, rhs: i64, result: i64) -> bool {
        match self {
            Expr::Lit(_) => false,
            Expr::Bin(l, o, r) => {
                if let (Expr::Lit(a), Expr::Lit(b)) = (l.as_ref(), r.as_ref()) {
                    if *a == lhs && *b == rhs && *o == op {
                        *self = Expr::Lit(result);
                        return true;
                    }
                    return false;
                }
                l.reduce_matching(lhs, op, rhs, result) || r.reduce_matching(lhs, op, rhs, result)
            }
        }
    }

    /// Random tree with exactly `n_ops` operators.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_ops: usize, ops: &[Op], lo: i64, hi: i64) -> Expr {
        if n_ops == 0 {
            return Expr::Lit(rng.random_range(lo..=hi));
        }
        let left_ops = rng.random_range(0..n_ops);
        let op = ops[rng.random_range(0..ops.len())];
        let l = Expr::random(rng, left_ops, ops, lo, hi);
        let r = Expr::random(rng, n_ops - 1 - left_ops, ops, lo, hi);
        Expr::Bin(Box::new(l), op, Box::new(r))
    }
}

fn parse_int(bytes: &[u8], pos: &mut usize) -> Option<i64> {
    let start = *pos;
    if bytes.get(*pos) == Some(&b'-') {
        *pos += 1;
    }
    let digits = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if *pos == digits {
        *pos = start;
        return None;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()?.parse().ok()
}

fn parse_expr(bytes: &[u8], pos: &mut usize) -> Option<Expr> {
    if bytes.get(*pos) == Some(&b'(') {
        *pos += 1;
        let l = parse_expr(bytes, pos)?;
        let op = Op::from_symbol(*bytes.get(*pos)? as char)?;
        *pos += 1;
        let r = parse_expr(bytes, pos)?;
        if bytes.get(*pos) != Some(&b')') {
            return None;
        }
        *pos += 1;
        Some(Expr::Bin(Box::new(l), op, Box::new(r)))
    } else {
        parse_int(bytes, pos).map(Expr::Lit)
    }
}

/// Parses a reduction line `a op b = c` where each integer may carry a sign.
pub fn parse_reduction(line: &str) -> Option<Reduction> {
    let bytes = line.as_bytes();
    let mut pos = 0;
    let lhs = parse_int(bytes, &mut pos)?;
    let op = Op::from_symbol(*bytes.get(pos)? as char)?;
    pos += 1;
    let rhs = parse_int(bytes, &mut pos)?;
    if bytes.get(pos) != Some(&b'=') {
        return None;
    }
    pos += 1;
    let result = parse_int(bytes, &mut pos)?;
    (pos == bytes.len()).then_some(Reduction {
        lhs,
        op,
        rhs,
        result,
    })
}
