//! Expression trees: evaluation, complexity, simplification, and text I/O.
//!
//! Evaluation is column-wise and NaN-poisoning: an operation that leaves the
//! real domain marks the sample as faulted instead of failing the whole
//! evaluation, so the search can score partially invalid candidates.

mod monomial;
mod parse;
mod simplify;

use std::collections::BTreeSet;
use std::fmt;

use serde::de::{self, SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use monomial::{canonical_key, integer_exponents, monomial_equivalent, monomial_expr, power_product, report_form, PowerProduct};
pub use parse::{parse, parse_template, parse_with_names, ParseError, Template};
pub use simplify::{detect_trivial_patterns, simplify, ConstantBand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryOp {
    Neg,
    Abs,
    Sqrt,
    Log,
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 5] = [UnaryOp::Neg, UnaryOp::Abs, UnaryOp::Sqrt, UnaryOp::Log, UnaryOp::Exp];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Abs => "abs",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Log => "log",
            UnaryOp::Exp => "exp",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        UnaryOp::ALL.into_iter().find(|op| op.name() == s)
    }

    fn apply(self, x: f64) -> Option<f64> {
        let v = match self {
            UnaryOp::Neg => -x,
            UnaryOp::Abs => x.abs(),
            UnaryOp::Sqrt if x < 0.0 => return None,
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Log if x <= 0.0 => return None,
            UnaryOp::Log => x.ln(),
            UnaryOp::Exp => x.exp(),
        };
        v.is_finite().then_some(v)
    }
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 5] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div, BinaryOp::Pow];

    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Pow => "pow",
        }
    }

    pub fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        BinaryOp::ALL
            .into_iter()
            .find(|op| op.name() == s || s.len() == 1 && s.starts_with(op.symbol()))
    }

    fn apply(self, a: f64, b: f64) -> Option<f64> {
        let v = match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div if b == 0.0 => return None,
            BinaryOp::Div => a / b,
            BinaryOp::Pow if a == 0.0 && b == 0.0 => return None,
            BinaryOp::Pow => a.powf(b),
        };
        v.is_finite().then_some(v)
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
            BinaryOp::Pow => 4,
        }
    }
}

/// Expression tree. `Pair` is only meaningful at the root, where it holds
/// two independently searched branches.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Pair(Box<Expr>, Box<Expr>),
}

/// Values of one evaluation plus the number of faulted samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// NaN exactly at faulted samples.
    pub values: Vec<f64>,
    pub domain_fault_count: usize,
}

impl EvalResult {
    pub fn fault_fraction(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.domain_fault_count as f64 / self.values.len() as f64
        }
    }

    pub fn is_clean(&self) -> bool {
        self.domain_fault_count == 0
    }
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Expr {
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn pair(a: Expr, b: Expr) -> Expr {
        Expr::Pair(Box::new(a), Box::new(b))
    }

    pub fn is_pair(&self) -> bool {
        matches!(self, Expr::Pair(..))
    }

    /// Root branches: two for a pair, otherwise the expression itself.
    pub fn branches(&self) -> Vec<&Expr> {
        match self {
            Expr::Pair(a, b) => vec![a, b],
            e => vec![e],
        }
    }

    /// Node count; a pair root contributes nothing itself.
    pub fn complexity(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) => 1 + a.complexity(),
            Expr::Binary(_, a, b) => 1 + a.complexity() + b.complexity(),
            Expr::Pair(a, b) => a.complexity() + b.complexity(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) => 1 + a.depth(),
            Expr::Binary(_, a, b) | Expr::Pair(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Distinct variable indices referenced anywhere in the tree.
    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Var(i) = e {
                out.insert(*i);
            }
        });
        out
    }

    pub fn has_variables(&self) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(_) => true,
            Expr::Unary(_, a) => a.has_variables(),
            Expr::Binary(_, a, b) | Expr::Pair(a, b) => a.has_variables() || b.has_variables(),
        }
    }

    /// Pre-order walk.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Unary(_, a) => a.visit(f),
            Expr::Binary(_, a, b) | Expr::Pair(a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    /// Constant values in pre-order.
    pub fn constants(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Const(c) = e {
                out.push(*c);
            }
        });
        out
    }

    /// Replaces constants in pre-order; `values` must match [`Expr::constants`] in length.
    pub fn with_constants(&self, values: &[f64]) -> Expr {
        let mut it = values.iter().copied();
        let out = self.map_constants(&mut it);
        debug_assert!(it.next().is_none(), "too many constants supplied");
        out
    }

    fn map_constants(&self, it: &mut impl Iterator<Item = f64>) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(it.next().expect("too few constants supplied")),
            Expr::Var(i) => Expr::Var(*i),
            Expr::Unary(op, a) => Expr::unary(*op, a.map_constants(it)),
            Expr::Binary(op, a, b) => {
                let a = a.map_constants(it);
                Expr::binary(*op, a, b.map_constants(it))
            }
            Expr::Pair(a, b) => {
                let a = a.map_constants(it);
                Expr::pair(a, b.map_constants(it))
            }
        }
    }

    /// Renumbers variables through `f`.
    pub fn map_vars(&self, f: &impl Fn(usize) -> usize) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => Expr::Var(f(*i)),
            Expr::Unary(op, a) => Expr::unary(*op, a.map_vars(f)),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.map_vars(f), b.map_vars(f)),
            Expr::Pair(a, b) => Expr::pair(a.map_vars(f), b.map_vars(f)),
        }
    }

    /// Number of nodes reachable by [`Expr::subtree`].
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) => 1 + a.node_count(),
            Expr::Binary(_, a, b) | Expr::Pair(a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    /// Pre-order node lookup.
    pub fn subtree(&self, idx: usize) -> Option<&Expr> {
        if idx == 0 {
            return Some(self);
        }
        let mut rest = idx - 1;
        match self {
            Expr::Const(_) | Expr::Var(_) => None,
            Expr::Unary(_, a) => a.subtree(rest),
            Expr::Binary(_, a, b) | Expr::Pair(a, b) => {
                let na = a.node_count();
                if rest < na {
                    a.subtree(rest)
                } else {
                    rest -= na;
                    b.subtree(rest)
                }
            }
        }
    }

    /// Copy with the pre-order node `idx` replaced.
    pub fn replace_subtree(&self, idx: usize, new: Expr) -> Expr {
        if idx == 0 {
            return new;
        }
        let rest = idx - 1;
        match self {
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Unary(op, a) => Expr::unary(*op, a.replace_subtree(rest, new)),
            Expr::Binary(op, a, b) => {
                let na = a.node_count();
                if rest < na {
                    Expr::binary(*op, a.replace_subtree(rest, new), (**b).clone())
                } else {
                    Expr::binary(*op, (**a).clone(), b.replace_subtree(rest - na, new))
                }
            }
            Expr::Pair(a, b) => {
                let na = a.node_count();
                if rest < na {
                    Expr::pair(a.replace_subtree(rest, new), (**b).clone())
                } else {
                    Expr::pair((**a).clone(), b.replace_subtree(rest - na, new))
                }
            }
        }
    }

    /// Value of a variable-free subtree, if it evaluates without faults.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            Expr::Var(_) | Expr::Pair(..) => None,
            Expr::Unary(op, a) => op.apply(a.constant_value()?),
            Expr::Binary(op, a, b) => op.apply(a.constant_value()?, b.constant_value()?),
        }
    }

    /// Stable structural hash (FNV-1a over node tags and constant bits).
    pub fn structural_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        self.visit(&mut |e| match e {
            Expr::Const(c) => {
                feed(&[1]);
                feed(&c.to_bits().to_le_bytes());
            }
            Expr::Var(i) => {
                feed(&[2]);
                feed(&(*i as u64).to_le_bytes());
            }
            Expr::Unary(op, _) => feed(&[3, *op as u8]),
            Expr::Binary(op, _, _) => feed(&[4, *op as u8]),
            Expr::Pair(..) => feed(&[5]),
        });
        h
    }

    /// Evaluates on column-major samples. A pair root cannot be evaluated as a
    /// scalar and yields all-faulted output; use [`Expr::evaluate_branches`].
    pub fn evaluate(&self, columns: &[Vec<f64>]) -> EvalResult {
        let n = columns.first().map_or(0, Vec::len);
        let mut fault = vec![false; n];
        let mut values = match self {
            Expr::Pair(..) => {
                fault.iter_mut().for_each(|f| *f = true);
                vec![f64::NAN; n]
            }
            _ => eval_node(self, columns, n, &mut fault),
        };
        let mut count = 0;
        for (v, f) in values.iter_mut().zip(&fault) {
            if *f {
                *v = f64::NAN;
                count += 1;
            }
        }
        EvalResult { values, domain_fault_count: count }
    }

    pub fn evaluate_branches(&self, columns: &[Vec<f64>]) -> Vec<EvalResult> {
        self.branches().into_iter().map(|b| b.evaluate(columns)).collect()
    }

    /// Infix text using `names[i]` for `Var(i)`.
    pub fn format_with(&self, names: &[String]) -> String {
        let mut s = String::new();
        write_expr(self, &mut s, &|i| names.get(i).cloned().unwrap_or_else(|| format!("x{i}")));
        s
    }
}

fn eval_node(e: &Expr, cols: &[Vec<f64>], n: usize, fault: &mut [bool]) -> Vec<f64> {
    match e {
        Expr::Const(c) => vec![*c; n],
        Expr::Var(i) => match cols.get(*i) {
            Some(c) => c.clone(),
            None => {
                fault.iter_mut().for_each(|f| *f = true);
                vec![f64::NAN; n]
            }
        },
        Expr::Unary(op, a) => {
            let mut v = eval_node(a, cols, n, fault);
            for (x, f) in v.iter_mut().zip(fault.iter_mut()) {
                match op.apply(*x) {
                    Some(y) => *x = y,
                    None => {
                        *f = true;
                        *x = f64::NAN;
                    }
                }
            }
            v
        }
        Expr::Binary(op, a, b) => {
            let mut va = eval_node(a, cols, n, fault);
            let vb = eval_node(b, cols, n, fault);
            for ((x, y), f) in va.iter_mut().zip(&vb).zip(fault.iter_mut()) {
                match op.apply(*x, *y) {
                    Some(z) => *x = z,
                    None => {
                        *f = true;
                        *x = f64::NAN;
                    }
                }
            }
            va
        }
        Expr::Pair(..) => {
            fault.iter_mut().for_each(|f| *f = true);
            vec![f64::NAN; n]
        }
    }
}

pub(crate) fn format_number(c: f64) -> String {
    let body = if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{}", c.abs() as i64)
    } else {
        format!("{:?}", c.abs())
    };
    if c.is_sign_negative() && c != 0.0 {
        format!("(-{body})")
    } else {
        body
    }
}

const PREC_NEG: u8 = 3;
const PREC_ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary(op, _, _) => op.precedence(),
        Expr::Unary(UnaryOp::Neg, a) if !matches!(**a, Expr::Const(_)) => PREC_NEG,
        _ => PREC_ATOM,
    }
}

fn write_expr(e: &Expr, out: &mut String, name: &impl Fn(usize) -> String) {
    let child = |c: &Expr, parens: bool, out: &mut String| {
        if parens {
            out.push('(');
        }
        write_expr(c, out, name);
        if parens {
            out.push(')');
        }
    };
    match e {
        Expr::Const(c) => out.push_str(&format_number(*c)),
        Expr::Var(i) => out.push_str(&name(*i)),
        Expr::Unary(UnaryOp::Neg, a) => {
            out.push('-');
            // `-3` would read back as a literal, so constants keep their parentheses
            let parens = matches!(**a, Expr::Const(_)) || precedence(a) < PREC_NEG;
            child(a, parens, out);
        }
        Expr::Unary(op, a) => {
            out.push_str(op.name());
            child(a, true, out);
        }
        Expr::Binary(op, a, b) => {
            let p = op.precedence();
            let (pa, pb) = (precedence(a), precedence(b));
            let left_parens = if *op == BinaryOp::Pow { pa <= p } else { pa < p };
            let right_parens = if *op == BinaryOp::Pow { pb < PREC_NEG } else { pb <= p };
            child(a, left_parens, out);
            out.push(op.symbol());
            child(b, right_parens, out);
        }
        Expr::Pair(a, b) => {
            out.push_str("pair(");
            write_expr(a, out, name);
            out.push_str(", ");
            write_expr(b, out, name);
            out.push(')');
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_expr(self, &mut s, &|i| format!("x{i}"));
        f.write_str(&s)
    }
}

// Trees serialize as nested arrays: ["add", ["var", 0], ["const", 2.0]].
impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Expr::Const(c) => {
                let mut seq = s.serialize_seq(Some(2))?;
                seq.serialize_element("const")?;
                seq.serialize_element(c)?;
                seq.end()
            }
            Expr::Var(i) => {
                let mut seq = s.serialize_seq(Some(2))?;
                seq.serialize_element("var")?;
                seq.serialize_element(i)?;
                seq.end()
            }
            Expr::Unary(op, a) => {
                let mut seq = s.serialize_seq(Some(2))?;
                seq.serialize_element(op.name())?;
                seq.serialize_element(a)?;
                seq.end()
            }
            Expr::Binary(op, a, b) => {
                let mut seq = s.serialize_seq(Some(3))?;
                seq.serialize_element(op.name())?;
                seq.serialize_element(a)?;
                seq.serialize_element(b)?;
                seq.end()
            }
            Expr::Pair(a, b) => {
                let mut seq = s.serialize_seq(Some(3))?;
                seq.serialize_element("pair")?;
                seq.serialize_element(a)?;
                seq.serialize_element(b)?;
                seq.end()
            }
        }
    }
}

struct ExprVisitor;

impl<'de> Visitor<'de> for ExprVisitor {
    type Value = Expr;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("an expression tree as a nested array")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Expr, A::Error> {
        let tag: String = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(0, &self))?;
        let mut next = |i: usize| -> Result<Expr, A::Error> {
            seq.next_element::<Expr>()?.ok_or_else(|| de::Error::invalid_length(i, &ExprVisitor))
        };
        let e = match tag.as_str() {
            "const" => {
                let c: f64 = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(1, &self))?;
                Expr::Const(c)
            }
            "var" => {
                let i: usize = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(1, &self))?;
                Expr::Var(i)
            }
            "pair" => {
                let a = next(1)?;
                Expr::pair(a, next(2)?)
            }
            other => {
                if let Some(op) = UnaryOp::from_name(other) {
                    Expr::unary(op, next(1)?)
                } else if let Some(op) = BinaryOp::from_name(other) {
                    let a = next(1)?;
                    Expr::binary(op, a, next(2)?)
                } else {
                    return Err(de::Error::unknown_variant(other, &["const", "var", "pair", "add", "log"]));
                }
            }
        };
        Ok(e)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Expr, D::Error> {
        d.deserialize_seq(ExprVisitor)
    }
}
