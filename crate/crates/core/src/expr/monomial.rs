//! Power-product view of expressions and monomial equivalence.
//!
//! Sub-trees that are not products, quotients, or constant powers are kept
//! as opaque factors keyed by a commutation-normalized rendering, so
//! `(M+m)*T^2/R^3` and `T^2*(m+M)/R^3` share a view.

use std::collections::BTreeMap;

use super::{BinaryOp, Expr, UnaryOp};

/// `coefficient * prod(factor ^ exponent)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerProduct {
    pub coefficient: f64,
    /// Canonical key -> (factor, exponent).
    pub factors: BTreeMap<String, (Expr, f64)>,
}

/// Rendering in which the operands of `+` and `*` are ordered.
pub fn canonical_key(e: &Expr) -> String {
    match e {
        Expr::Const(c) => format!("{c:?}"),
        Expr::Var(i) => format!("x{i}"),
        Expr::Unary(op, a) => format!("{}({})", op.name(), canonical_key(a)),
        Expr::Binary(op, a, b) => {
            let (mut ka, mut kb) = (canonical_key(a), canonical_key(b));
            if matches!(op, BinaryOp::Add | BinaryOp::Mul) && kb < ka {
                std::mem::swap(&mut ka, &mut kb);
            }
            format!("{}({ka},{kb})", op.name())
        }
        Expr::Pair(a, b) => format!("pair({},{})", canonical_key(a), canonical_key(b)),
    }
}

fn atom(e: &Expr) -> PowerProduct {
    let mut factors = BTreeMap::new();
    factors.insert(canonical_key(e), (e.clone(), 1.0));
    PowerProduct { coefficient: 1.0, factors }
}

fn combine(mut a: PowerProduct, b: PowerProduct, sign: f64) -> PowerProduct {
    a.coefficient = if sign > 0.0 { a.coefficient * b.coefficient } else { a.coefficient / b.coefficient };
    for (k, (f, x)) in b.factors {
        a.factors.entry(k).and_modify(|(_, y)| *y += sign * x).or_insert((f, sign * x));
    }
    a.factors.retain(|_, (_, x)| x.abs() > 1e-12);
    a
}

fn scale(mut a: PowerProduct, k: f64) -> Option<PowerProduct> {
    if a.coefficient < 0.0 && k.fract() != 0.0 {
        return None;
    }
    a.coefficient = a.coefficient.powf(k);
    for (_, x) in a.factors.values_mut() {
        *x *= k;
    }
    a.factors.retain(|_, (_, x)| x.abs() > 1e-12);
    Some(a)
}

/// Power-product view of `e`; `None` for pairs and invalid constant powers.
pub fn power_product(e: &Expr) -> Option<PowerProduct> {
    match e {
        Expr::Pair(..) => None,
        Expr::Const(c) => Some(PowerProduct { coefficient: *c, factors: BTreeMap::new() }),
        Expr::Binary(BinaryOp::Mul, a, b) => Some(combine(power_product(a)?, power_product(b)?, 1.0)),
        Expr::Binary(BinaryOp::Div, a, b) => Some(combine(power_product(a)?, power_product(b)?, -1.0)),
        Expr::Binary(BinaryOp::Pow, a, b) => match b.constant_value() {
            Some(k) => scale(power_product(a)?, k),
            None => Some(atom(e)),
        },
        Expr::Unary(UnaryOp::Sqrt, a) => scale(power_product(a)?, 0.5),
        Expr::Unary(UnaryOp::Neg, a) => {
            let mut p = power_product(a)?;
            p.coefficient = -p.coefficient;
            Some(p)
        }
        _ => Some(atom(e)),
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

fn small_fraction(x: f64, max_den: i64) -> Option<(i64, i64)> {
    (1..=max_den).find_map(|q| {
        let p = (x * q as f64).round();
        ((x - p / q as f64).abs() <= 1e-7 * x.abs().max(1.0)).then_some((p as i64, q))
    })
}

/// Coprime integer exponents proportional to those of `p`, oriented so that
/// positive exponents are at least as many as negative ones (ties: the largest
/// magnitude goes to the denominator). `None` when some ratio is not a small fraction.
pub fn integer_exponents(p: &PowerProduct) -> Option<Vec<(Expr, i64)>> {
    let exps: Vec<f64> = p.factors.values().map(|(_, x)| *x).collect();
    let unit = exps.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
    if exps.is_empty() || !unit.is_finite() {
        return None;
    }
    let fracs: Vec<(i64, i64)> = exps.iter().map(|x| small_fraction(x / unit, 12)).collect::<Option<_>>()?;
    let lcm = fracs.iter().fold(1i64, |l, (_, q)| l / gcd(l, *q) * q);
    let mut ints: Vec<i64> = fracs.iter().map(|(n, q)| n * (lcm / q)).collect();
    let g = ints.iter().fold(0, |g, v| gcd(g, *v));
    ints.iter_mut().for_each(|v| *v /= g);
    let pos = ints.iter().filter(|v| **v > 0).count();
    let neg = ints.len() - pos;
    let flip = if pos == neg {
        let big = ints.iter().copied().max_by_key(|v| v.abs()).unwrap_or(0);
        big > 0
    } else {
        neg > pos
    };
    if flip {
        ints.iter_mut().for_each(|v| *v = -*v);
    }
    Some(p.factors.values().map(|(f, _)| f.clone()).zip(ints).collect())
}

/// The product of `factors` as an expression (`a^2*b/c^3` shape), without a coefficient.
pub fn monomial_expr(factors: &[(Expr, i64)]) -> Expr {
    let power = |f: &Expr, k: i64| {
        if k == 1 { f.clone() } else { Expr::binary(BinaryOp::Pow, f.clone(), Expr::Const(k as f64)) }
    };
    let join = |parts: Vec<Expr>| parts.into_iter().reduce(|a, b| Expr::binary(BinaryOp::Mul, a, b));
    let num = join(factors.iter().filter(|(_, k)| *k > 0).map(|(f, k)| power(f, *k)).collect());
    let den = join(factors.iter().filter(|(_, k)| *k < 0).map(|(f, k)| power(f, -k)).collect());
    match (num, den) {
        (Some(n), Some(d)) => Expr::binary(BinaryOp::Div, n, d),
        (Some(n), None) => n,
        (None, Some(d)) => Expr::binary(BinaryOp::Div, Expr::Const(1.0), d),
        (None, None) => Expr::Const(1.0),
    }
}

/// Coprime-integer report form of a power product (`T^2/R^3`), when one exists.
pub fn report_form(e: &Expr) -> Option<Expr> {
    let p = power_product(e)?;
    Some(monomial_expr(&integer_exponents(&p)?))
}

/// Equal factors with proportional exponents: equal up to a constant factor
/// and an overall nonzero power.
pub fn monomial_equivalent(a: &Expr, b: &Expr) -> bool {
    let (Some(pa), Some(pb)) = (power_product(a), power_product(b)) else {
        return false;
    };
    if pa.factors.is_empty() || pa.factors.len() != pb.factors.len() {
        return false;
    }
    let mut ratio = None;
    for (k, (_, xa)) in &pa.factors {
        let Some((_, xb)) = pb.factors.get(k) else {
            return false;
        };
        let r = xa / xb;
        match ratio {
            None => ratio = Some(r),
            Some(r0) if (r - r0).abs() > 1e-9 * r0.abs().max(1.0) => return false,
            _ => {}
        }
    }
    true
}
