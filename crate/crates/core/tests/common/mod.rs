//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use cosr_core::dataset::Dataset;
use cosr_core::expr::{BinaryOp, Expr, UnaryOp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEEDS: [u64; 5] = [1, 2, 3, 7, 11];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Random tree over `nvars` variables with small constants.
pub fn random_expr(rng: &mut ChaCha8Rng, nvars: usize, depth: usize) -> Expr {
    if depth == 0 || rng.random_bool(0.3) {
        return if rng.random_bool(0.7) {
            Expr::Var(rng.random_range(0..nvars))
        } else {
            Expr::Const((rng.random_range(-30..=30) as f64) / 10.0)
        };
    }
    if rng.random_bool(0.2) {
        let op = [UnaryOp::Sqrt, UnaryOp::Log, UnaryOp::Exp, UnaryOp::Neg][rng.random_range(0..4)];
        return Expr::unary(op, random_expr(rng, nvars, depth - 1));
    }
    let op = BinaryOp::ALL[rng.random_range(0..BinaryOp::ALL.len())];
    Expr::binary(op, random_expr(rng, nvars, depth - 1), random_expr(rng, nvars, depth - 1))
}

/// Columns of positive values, log-uniform on `[0.1, 10]`.
pub fn positive_columns(rng: &mut ChaCha8Rng, nvars: usize, n: usize) -> Vec<Vec<f64>> {
    (0..nvars).map(|_| (0..n).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect()).collect()
}

pub fn dataset(x: Vec<Vec<f64>>, y: Option<Vec<f64>>) -> Dataset {
    Dataset::from_xy(x, y).expect("well-formed columns")
}

/// `a = k*b` on every row for one nonzero `k`, to relative tolerance `tol`.
pub fn proportional(a: &[f64], b: &[f64], tol: f64) -> bool {
    if a.len() != b.len() || a.is_empty() {
        return false;
    }
    let k = a[0] / b[0];
    k.is_finite() && k != 0.0 && a.iter().zip(b).all(|(x, y)| x.is_finite() && (x / y / k - 1.0).abs() <= tol)
}

pub fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}
