//! Rewrite-based simplification and detection of degenerate sub-trees.

use serde::{Deserialize, Serialize};

use super::{BinaryOp, Expr, UnaryOp};

/// Admissible magnitude range for constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantBand {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ConstantBand {
    fn default() -> Self {
        ConstantBand { lo: 1e-3, hi: 1e3 }
    }
}

impl ConstantBand {
    pub fn contains(&self, c: f64) -> bool {
        let a = c.abs();
        a >= self.lo && a <= self.hi
    }
}

fn is_const(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Const(c) if *c == v)
}

fn step(e: &Expr) -> Expr {
    match e {
        Expr::Const(_) | Expr::Var(_) => e.clone(),
        Expr::Pair(a, b) => Expr::pair(step(a), step(b)),
        Expr::Unary(op, a) => {
            let a = step(a);
            if let (UnaryOp::Neg, Expr::Unary(UnaryOp::Neg, inner)) = (op, &a) {
                return (**inner).clone();
            }
            let node = Expr::unary(*op, a);
            match node.constant_value() {
                Some(v) => Expr::Const(v),
                None => node,
            }
        }
        Expr::Binary(op, a, b) => {
            let (a, b) = (step(a), step(b));
            let node = Expr::binary(*op, a.clone(), b.clone());
            if let Some(v) = node.constant_value() {
                return Expr::Const(v);
            }
            match op {
                BinaryOp::Sub if a == b => Expr::Const(0.0),
                BinaryOp::Div if a == b => Expr::Const(1.0),
                BinaryOp::Add if is_const(&a, 0.0) => b,
                BinaryOp::Add | BinaryOp::Sub if is_const(&b, 0.0) => a,
                BinaryOp::Mul if is_const(&a, 0.0) || is_const(&b, 0.0) => Expr::Const(0.0),
                BinaryOp::Mul if is_const(&a, 1.0) => b,
                BinaryOp::Mul | BinaryOp::Div if is_const(&b, 1.0) => a,
                BinaryOp::Pow if is_const(&b, 0.0) => Expr::Const(1.0),
                BinaryOp::Pow if is_const(&b, 1.0) => a,
                _ => node,
            }
        }
    }
}

/// Constant folding plus the identities `x-x`, `x/x`, `x*1`, `x+0`, `x^0`,
/// `x^1`, `--x`, applied bottom-up until nothing changes.
pub fn simplify(e: &Expr) -> Expr {
    let mut cur = step(e);
    loop {
        let next = step(&cur);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

fn collapsing_subtrees(e: &Expr) -> usize {
    if !e.has_variables() {
        return 0;
    }
    if !e.is_pair() && matches!(simplify(e), Expr::Const(_)) {
        return 1;
    }
    match e {
        Expr::Const(_) | Expr::Var(_) => 0,
        Expr::Unary(_, a) => collapsing_subtrees(a),
        Expr::Binary(_, a, b) | Expr::Pair(a, b) => collapsing_subtrees(a) + collapsing_subtrees(b),
    }
}

/// Number of variable-bearing sub-trees that collapse to a constant, plus
/// constants whose magnitude lies outside `band`.
pub fn detect_trivial_patterns(e: &Expr, band: &ConstantBand) -> usize {
    let out_of_band = e.constants().into_iter().filter(|c| !band.contains(*c)).count();
    collapsing_subtrees(e) + out_of_band
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn s(text: &str) -> String {
        simplify(&parse(text).unwrap()).to_string()
    }

    #[test]
    fn rewrite_rules() {
        assert_eq!(s("(x0 - x0) + x1"), "x1");
        assert_eq!(s("x0/x0"), "1");
        assert_eq!(s("2*3*x0"), "6*x0");
        assert_eq!(s("x0^1*1 + 0"), "x0");
        assert_eq!(s("x0^0"), "1");
        assert_eq!(s("-(-(x0))"), "x0");
        assert_eq!(s("log(exp(2))*x0"), "2*x0");
        assert_eq!(s("pair(x0*1, x1-x1)"), "pair(x0, 0)");
    }

    #[test]
    fn faulting_constants_are_not_folded() {
        assert_eq!(s("log(0-1)*x0"), "log((-1))*x0");
        assert_eq!(s("x0^0+x1"), "1+x1");
    }

    #[test]
    fn trivial_pattern_counts() {
        let band = ConstantBand::default();
        assert_eq!(detect_trivial_patterns(&parse("x0 - x0").unwrap(), &band), 1);
        assert_eq!(detect_trivial_patterns(&parse("x0*x1/x2").unwrap(), &band), 0);
        assert_eq!(detect_trivial_patterns(&parse("1e7 * x0").unwrap(), &band), 1);
        assert_eq!(detect_trivial_patterns(&parse("x1 + x0/x0").unwrap(), &band), 1);
        assert_eq!(detect_trivial_patterns(&parse("x1^2/x0^3").unwrap(), &band), 0);
    }
}
