//! Multivariate polynomial least squares on z-scored inputs.
//!
//! Monomials are ordered by total degree, then by descending exponent of the
//! earlier inputs: for two inputs and degree 2 the order is
//! `1, a, b, a^2, a*b, b^2`. The exponent list is stored in every model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_DEGREE: u32 = 5;

/// Relative pivot size below which the design matrix counts as singular.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyfitError {
    #[error("design matrix has rank {rank}, need {needed}")]
    RankDeficient { rank: usize, needed: usize },
    #[error("{rows} rows cannot determine {needed} coefficients")]
    InsufficientData { rows: usize, needed: usize },
    #[error("target has zero variance")]
    DegenerateVariance,
    #[error("relative error is undefined for a zero target")]
    ZeroTarget,
    #[error("non-finite input")]
    NonFinite,
    #[error("degree must be in 1..={MAX_DEGREE}, got {0}")]
    BadDegree(u32),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Number of monomials of total degree <= `d` in `k` variables, C(k+d, d).
pub fn coefficient_count(k: usize, d: u32) -> usize {
    let d = d as usize;
    (1..=d).fold(1usize, |acc, i| acc * (k + i) / i)
}

/// Exponent vectors of all monomials of total degree <= `d`, in model order.
pub fn monomials(k: usize, d: u32) -> Vec<Vec<u32>> {
    fn fill(k: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == k - 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            fill(k, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for t in 0..=d {
        if k == 0 {
            if t == 0 {
                out.push(Vec::new());
            }
            continue;
        }
        fill(k, t, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    pub inputs: usize,
    pub degree: u32,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub monomials: Vec<Vec<u32>>,
    pub coefficients: Vec<f64>,
    pub rss: f64,
    pub r2: f64,
}

fn standardize(x: f64, mean: f64, scale: f64) -> f64 {
    (x - mean) / scale
}

fn monomial_value(z: &[f64], exps: &[u32]) -> f64 {
    z.iter().zip(exps).fold(1.0, |acc, (v, &e)| acc * v.powi(e as i32))
}

/// Ordinary least squares via Householder QR on the standardized monomial basis.
pub fn fit_poly<C: AsRef<[f64]>>(x: &[C], y: &[f64], degree: u32) -> Result<PolyModel, PolyfitError> {
    if !(1..=MAX_DEGREE).contains(&degree) {
        return Err(PolyfitError::BadDegree(degree));
    }
    let n = y.len();
    let k = x.len();
    for c in x {
        if c.as_ref().len() != n {
            return Err(PolyfitError::LengthMismatch(c.as_ref().len(), n));
        }
    }
    let p = coefficient_count(k, degree);
    if n < p {
        return Err(PolyfitError::InsufficientData { rows: n, needed: p });
    }
    if y.iter().chain(x.iter().flat_map(|c| c.as_ref())).any(|v| !v.is_finite()) {
        return Err(PolyfitError::NonFinite);
    }

    let mut means = Vec::with_capacity(k);
    let mut scales = Vec::with_capacity(k);
    for c in x {
        let c = c.as_ref();
        let m = c.iter().sum::<f64>() / n as f64;
        let s = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        means.push(m);
        // a constant column duplicates the intercept and is caught by the rank check
        scales.push(if s > 0.0 && s.is_finite() { s } else { 1.0 });
    }
    let mons = monomials(k, degree);
    let mut z = vec![0.0; k];
    let mut a = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        for (j, c) in x.iter().enumerate() {
            z[j] = standardize(c.as_ref()[i], means[j], scales[j]);
        }
        for (col, e) in mons.iter().enumerate() {
            a[(i, col)] = monomial_value(&z, e);
        }
    }

    let qr = a.clone().qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let rank = (0..p).filter(|&i| r[(i, i)].abs() > RANK_TOL * max_diag).count();
    if rank < p || max_diag == 0.0 {
        return Err(PolyfitError::RankDeficient { rank, needed: p });
    }
    let mut qty = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, p).into_owned();
    let beta = r.solve_upper_triangular(&rhs).ok_or(PolyfitError::RankDeficient { rank, needed: p })?;
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(PolyfitError::NonFinite);
    }

    let fitted = &a * &beta;
    let rss: f64 = fitted.iter().zip(y).map(|(f, v)| (v - f).powi(2)).sum();
    let r2 = r_squared(y, fitted.as_slice()).unwrap_or(f64::NAN);
    Ok(PolyModel {
        inputs: k,
        degree,
        means,
        scales,
        monomials: mons,
        coefficients: beta.iter().copied().collect(),
        rss,
        r2,
    })
}

/// Lowest degree in `1..=max_degree` whose R² reaches `threshold`; if none
/// does, the successful fit with the highest R².
pub fn fit_poly_sweep<C: AsRef<[f64]>>(
    x: &[C],
    y: &[f64],
    max_degree: u32,
    threshold: f64,
) -> Result<PolyModel, PolyfitError> {
    let mut best: Option<PolyModel> = None;
    let mut first_err = None;
    for d in 1..=max_degree.min(MAX_DEGREE) {
        match fit_poly(x, y, d) {
            Ok(m) if m.r2 >= threshold => return Ok(m),
            Ok(m) => {
                if best.as_ref().is_none_or(|b| m.r2 > b.r2) {
                    best = Some(m);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.unwrap_or(PolyfitError::BadDegree(max_degree)))
}

impl PolyModel {
    pub fn coefficient_count(&self) -> usize {
        self.coefficients.len()
    }

    /// Predictions for column-major inputs.
    pub fn predict<C: AsRef<[f64]>>(&self, x: &[C]) -> Vec<f64> {
        assert_eq!(x.len(), self.inputs, "input count");
        let n = x.first().map_or(0, |c| c.as_ref().len());
        let n = if self.inputs == 0 { 1 } else { n };
        let mut z = vec![0.0; self.inputs];
        (0..n)
            .map(|i| {
                for (j, c) in x.iter().enumerate() {
                    z[j] = standardize(c.as_ref()[i], self.means[j], self.scales[j]);
                }
                self.monomials.iter().zip(&self.coefficients).map(|(e, b)| b * monomial_value(&z, e)).sum()
            })
            .collect()
    }

    /// Intercept and slopes in raw input units; only defined for degree 1.
    pub fn linear_coefficients(&self) -> Option<(f64, Vec<f64>)> {
        if self.degree != 1 {
            return None;
        }
        let slopes: Vec<f64> = (0..self.inputs).map(|j| self.coefficients[j + 1] / self.scales[j]).collect();
        let intercept = self.coefficients[0] - slopes.iter().zip(&self.means).map(|(s, m)| s * m).sum::<f64>();
        Some((intercept, slopes))
    }
}

/// 1 - SS_res/SS_tot.
pub fn r_squared(y: &[f64], yhat: &[f64]) -> Result<f64, PolyfitError> {
    if y.len() != yhat.len() {
        return Err(PolyfitError::LengthMismatch(y.len(), yhat.len()));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 || !ss_tot.is_finite() {
        return Err(PolyfitError::DegenerateVariance);
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// mean(|yhat - y| / |y|).
pub fn mean_relative_error(y: &[f64], yhat: &[f64]) -> Result<f64, PolyfitError> {
    if y.len() != yhat.len() {
        return Err(PolyfitError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.contains(&0.0) {
        return Err(PolyfitError::ZeroTarget);
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| ((b - a) / a).abs()).sum::<f64>() / y.len() as f64)
}
