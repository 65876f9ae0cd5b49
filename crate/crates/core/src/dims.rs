//! Exact dimensional analysis.
//!
//! Dimension exponents are kept as exact rationals throughout. The dimension
//! matrix has one row per base dimension and one column per physical
//! variable; its rational null space is the space of dimensionless power
//! products (π groups).

use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dataset::{Dataset, Provenance};
use crate::expr::{BinaryOp, Expr, UnaryOp};

pub type Rational = BigRational;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DimsError {
    #[error("dimension vector has {got} entries, base has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unknown base dimension `{0}`")]
    UnknownBase(String),
    #[error("invalid rational `{0}`")]
    BadRational(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("empty dimension matrix")]
    Empty,
    #[error("no integer π basis with |exponent| <= {max_exp}; rational basis returned instead")]
    CanonicalizationFailed { max_exp: u32, fallback: Vec<PiGroup> },
    #[error("π group undefined on {} row(s): {rows:?}", rows.len())]
    DomainError { rows: Vec<usize> },
}

/// Parses `p/q`, `p`, or a decimal integer into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational, DimsError> {
    let s = s.trim();
    let bad = || DimsError::BadRational(s.to_string());
    match s.split_once('/') {
        Some((p, q)) => {
            let p: BigInt = p.trim().parse().map_err(|_| bad())?;
            let q: BigInt = q.trim().parse().map_err(|_| bad())?;
            if q.is_zero() {
                return Err(bad());
            }
            Ok(Rational::new(p, q))
        }
        None => s.parse::<BigInt>().map(Rational::from_integer).map_err(|_| bad()),
    }
}

pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn rational_from_int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

/// Finds p/q with q <= `max_den` within `tol` of `x`.
pub fn rationalize(x: f64, max_den: i64, tol: f64) -> Option<Rational> {
    if !x.is_finite() {
        return None;
    }
    (1..=max_den).find_map(|q| {
        let p = (x * q as f64).round();
        if (x - p / q as f64).abs() <= tol && p.abs() < 1e15 {
            Some(Rational::new(BigInt::from(p as i64), BigInt::from(q)))
        } else {
            None
        }
    })
}

/// Ordered list of base dimension names.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BaseDims(Vec<String>);

impl Default for BaseDims {
    fn default() -> Self {
        BaseDims(["M", "L", "T", "Theta"].iter().map(|s| s.to_string()).collect())
    }
}

impl BaseDims {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        BaseDims(names.into_iter().map(Into::into).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        // accept the usual spellings of temperature
        let alias = match name {
            "Θ" | "theta" | "K" => "Theta",
            other => other,
        };
        self.0.iter().position(|n| n == name || n == alias)
    }

    /// Builds a vector from `(base name, exponent)` pairs; unnamed bases are zero.
    pub fn vector<'a>(
        &self,
        entries: impl IntoIterator<Item = (&'a str, Rational)>,
    ) -> Result<DimVector, DimsError> {
        let mut v = DimVector::zeros(self.len());
        for (name, exp) in entries {
            let i = self.index_of(name).ok_or_else(|| DimsError::UnknownBase(name.to_string()))?;
            v.exponents[i] += exp;
        }
        Ok(v)
    }

    pub fn format(&self, v: &DimVector) -> String {
        let parts: Vec<String> = self
            .0
            .iter()
            .zip(&v.exponents)
            .filter(|(_, e)| !e.is_zero())
            .map(|(n, e)| format!("{n}^{}", format_rational(e)))
            .collect();
        if parts.is_empty() {
            "1".to_string()
        } else {
            parts.join(" ")
        }
    }
}

/// Exact exponents of a physical dimension over a [`BaseDims`] list.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DimVector {
    exponents: Vec<Rational>,
}

impl DimVector {
    pub fn zeros(k: usize) -> Self {
        DimVector { exponents: vec![Rational::zero(); k] }
    }

    pub fn from_ints(exps: &[i64]) -> Self {
        DimVector { exponents: exps.iter().map(|&e| rational_from_int(e)).collect() }
    }

    pub fn from_rationals(exponents: Vec<Rational>) -> Self {
        DimVector { exponents }
    }

    pub fn exponents(&self) -> &[Rational] {
        &self.exponents
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn is_dimensionless(&self) -> bool {
        self.exponents.iter().all(Zero::is_zero)
    }

    /// Dimension of a product.
    pub fn mul(&self, other: &DimVector) -> DimVector {
        DimVector {
            exponents: self.exponents.iter().zip(&other.exponents).map(|(a, b)| a + b).collect(),
        }
    }

    /// Dimension of a quotient.
    pub fn div(&self, other: &DimVector) -> DimVector {
        DimVector {
            exponents: self.exponents.iter().zip(&other.exponents).map(|(a, b)| a - b).collect(),
        }
    }

    /// Dimension of a power.
    pub fn pow(&self, r: &Rational) -> DimVector {
        DimVector { exponents: self.exponents.iter().map(|a| a * r).collect() }
    }
}

impl Serialize for DimVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<String> = self.exponents.iter().map(format_rational).collect();
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DimVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<String>::deserialize(d)?;
        let exponents = v
            .iter()
            .map(|s| parse_rational(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)?;
        Ok(DimVector { exponents })
    }
}

/// Dimension matrix: one column per physical variable.
#[derive(Debug, Clone, PartialEq)]
pub struct DimMatrix {
    base: BaseDims,
    vars: Vec<(String, DimVector)>,
}

impl DimMatrix {
    pub fn new(base: BaseDims, vars: Vec<(String, DimVector)>) -> Result<Self, DimsError> {
        for (_, v) in &vars {
            if v.len() != base.len() {
                return Err(DimsError::LengthMismatch { expected: base.len(), got: v.len() });
            }
        }
        Ok(DimMatrix { base, vars })
    }

    pub fn base(&self) -> &BaseDims {
        &self.base
    }

    pub fn variables(&self) -> &[(String, DimVector)] {
        &self.vars
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.iter().map(|(n, _)| n.clone()).collect()
    }

    /// k x n rows of exponents.
    fn rows(&self) -> Vec<Vec<Rational>> {
        (0..self.base.len())
            .map(|r| self.vars.iter().map(|(_, v)| v.exponents[r].clone()).collect())
            .collect()
    }

    pub fn rank(&self) -> usize {
        rank(&self.rows())
    }
}

/// A dimensionless power product `prod x_i^{e_i}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PiGroup {
    names: Vec<String>,
    exponents: Vec<Rational>,
}

#[derive(Serialize, Deserialize)]
struct PiGroupRepr {
    names: Vec<String>,
    exponents: Vec<String>,
}

impl Serialize for PiGroup {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PiGroupRepr {
            names: self.names.clone(),
            exponents: self.exponents.iter().map(format_rational).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PiGroup {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PiGroupRepr::deserialize(d)?;
        if r.names.len() != r.exponents.len() {
            return Err(serde::de::Error::custom("names and exponents differ in length"));
        }
        let exponents = r
            .exponents
            .iter()
            .map(|s| parse_rational(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)?;
        Ok(PiGroup { names: r.names, exponents })
    }
}

impl PiGroup {
    pub fn new(names: Vec<String>, exponents: Vec<Rational>) -> Self {
        assert_eq!(names.len(), exponents.len());
        PiGroup { names, exponents }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn exponents(&self) -> &[Rational] {
        &self.exponents
    }

    pub fn exponent_of(&self, name: &str) -> Option<&Rational> {
        self.names.iter().position(|n| n == name).map(|i| &self.exponents[i])
    }

    pub fn dimension(&self, m: &DimMatrix) -> DimVector {
        let mut acc = DimVector::zeros(m.base.len());
        for ((_, dv), e) in m.vars.iter().zip(&self.exponents) {
            acc = acc.mul(&dv.pow(e));
        }
        acc
    }

    /// Exponents scaled to coprime integers (sign preserved).
    pub fn integer_exponents(&self) -> Vec<i64> {
        scale_to_integers(&self.exponents)
            .iter()
            .map(|b| b.to_i64().expect("exponent fits in i64"))
            .collect()
    }

    /// The same group with exponents replaced by their coprime integer scaling.
    pub fn integer_scaled(&self) -> PiGroup {
        PiGroup {
            names: self.names.clone(),
            exponents: scale_to_integers(&self.exponents).into_iter().map(Rational::from_integer).collect(),
        }
    }

    /// Infix power-product form, e.g. `V*d/nu`.
    pub fn to_infix(&self) -> String {
        let term = |name: &str, e: &Rational| -> String {
            if e.is_one() {
                name.to_string()
            } else if e.is_integer() {
                format!("{name}^{}", e.numer())
            } else {
                format!("{name}^({})", format_rational(e))
            }
        };
        let num: Vec<String> = self
            .names
            .iter()
            .zip(&self.exponents)
            .filter(|(_, e)| e.is_positive())
            .map(|(n, e)| term(n, e))
            .collect();
        let den: Vec<String> = self
            .names
            .iter()
            .zip(&self.exponents)
            .filter(|(_, e)| e.is_negative())
            .map(|(n, e)| term(n, &-e.clone()))
            .collect();
        let num_s = if num.is_empty() { "1".to_string() } else { num.join("*") };
        match den.len() {
            0 => num_s,
            1 => format!("{num_s}/{}", den[0]),
            _ => format!("{num_s}/({})", den.join("*")),
        }
    }

    /// Evaluates the power product on one row of values aligned with `names`.
    fn eval_row(&self, row: &[f64]) -> Option<f64> {
        let mut acc = 1.0f64;
        for (x, e) in row.iter().zip(&self.exponents) {
            if e.is_zero() {
                continue;
            }
            let v = if e.is_integer() {
                x.powi(e.to_integer().to_i32()?)
            } else {
                if *x <= 0.0 {
                    return None;
                }
                x.powf(e.to_f64()?)
            };
            acc *= v;
        }
        acc.is_finite().then_some(acc)
    }
}

impl fmt::Display for PiGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_infix())
    }
}

fn scale_to_integers(v: &[Rational]) -> Vec<BigInt> {
    let lcm = v.iter().fold(BigInt::one(), |acc, r| acc.lcm(r.denom()));
    let ints: Vec<BigInt> = v.iter().map(|r| (r * Rational::from_integer(lcm.clone())).to_integer()).collect();
    let g = ints.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
    if g.is_zero() {
        ints
    } else {
        ints.into_iter().map(|x| x / &g).collect()
    }
}

/// Reduced row echelon form; returns the reduced rows and pivot columns.
fn rref(rows: &[Vec<Rational>]) -> (Vec<Vec<Rational>>, Vec<usize>) {
    let mut m: Vec<Vec<Rational>> = rows.to_vec();
    let ncols = m.first().map_or(0, Vec::len);
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        if r == m.len() {
            break;
        }
        let Some(p) = (r..m.len()).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = m[r][c].recip();
        for x in m[r].iter_mut() {
            *x *= &inv;
        }
        for i in 0..m.len() {
            if i != r && !m[i][c].is_zero() {
                let f = m[i][c].clone();
                for j in 0..ncols {
                    let d = &f * &m[r][j];
                    m[i][j] -= d;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    m.truncate(r);
    (m, pivots)
}

/// Rank of a rational matrix given as rows.
pub fn rank(rows: &[Vec<Rational>]) -> usize {
    rref(rows).1.len()
}

/// Rational basis of the null space of the dimension matrix.
///
/// Returns exactly `n - rank` groups, one per free column of the reduced
/// echelon form.
pub fn null_space(m: &DimMatrix) -> Vec<PiGroup> {
    let n = m.vars.len();
    let (reduced, pivots) = rref(&m.rows());
    let names = m.names();
    (0..n)
        .filter(|c| !pivots.contains(c))
        .map(|free| {
            let mut v = vec![Rational::zero(); n];
            v[free] = Rational::one();
            for (row, &p) in reduced.iter().zip(&pivots) {
                v[p] = -row[free].clone();
            }
            PiGroup::new(names.clone(), v)
        })
        .collect()
}

/// True when both bases span the same rational subspace.
pub fn spans_equal(a: &[PiGroup], b: &[PiGroup]) -> bool {
    let rows = |g: &[PiGroup]| g.iter().map(|p| p.exponents.clone()).collect::<Vec<_>>();
    let (ra, rb) = (rows(a), rows(b));
    let ka = rank(&ra);
    let kb = rank(&rb);
    let mut both = ra;
    both.extend(rb);
    ka == kb && rank(&both) == ka
}

// Sign convention: more positive than negative exponents; on a tie the first
// nonzero exponent is positive.
fn orient(v: &mut [BigInt]) {
    let pos = v.iter().filter(|x| x.is_positive()).count();
    let neg = v.iter().filter(|x| x.is_negative()).count();
    let flip = match pos.cmp(&neg) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => v.iter().find(|x| !x.is_zero()).is_some_and(|x| x.is_negative()),
    };
    if flip {
        for x in v.iter_mut() {
            *x = -x.clone();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct CandidateKey {
    l1: i64,
    support_len: usize,
    support: Vec<usize>,
    exps: Vec<i64>,
}

fn candidate_key(v: &[BigInt]) -> CandidateKey {
    let exps: Vec<i64> = v.iter().map(|x| x.to_i64().unwrap_or(i64::MAX / 8)).collect();
    let support: Vec<usize> = exps.iter().enumerate().filter(|(_, e)| **e != 0).map(|(i, _)| i).collect();
    CandidateKey { l1: exps.iter().map(|e| e.abs()).sum(), support_len: support.len(), support, exps }
}

/// Rewrites a π basis into small-integer form.
///
/// Integer representatives are enumerated over the reduced echelon basis of
/// the span with coefficients in `[-max_exp, max_exp]`; groups are then
/// picked greedily by (L1 norm, support size, support indices, exponents)
/// while keeping the set linearly independent. When `target` names a
/// variable that occurs in the span, exactly one group carries it, with
/// exponent +1.
pub fn canonicalize_pi_basis(
    basis: &[PiGroup],
    target: Option<&str>,
    max_exp: u32,
) -> Result<Vec<PiGroup>, DimsError> {
    let Some(first) = basis.first() else {
        return Ok(Vec::new());
    };
    let names = first.names.clone();
    let rows: Vec<Vec<Rational>> = basis.iter().map(|g| g.exponents.clone()).collect();
    let (reduced, _) = rref(&rows);
    let p = reduced.len();
    let fallback = || DimsError::CanonicalizationFailed {
        max_exp,
        fallback: reduced.iter().map(|r| PiGroup::new(names.clone(), r.clone()).integer_scaled()).collect(),
    };
    // coefficient grids above 7^6 are not worth enumerating
    if p > 6 || max_exp == 0 {
        return Err(fallback());
    }

    let bound = BigInt::from(max_exp);
    let width = 2 * max_exp as i64 + 1;
    let mut seen: BTreeSet<Vec<BigInt>> = BTreeSet::new();
    let mut coeffs = vec![-(max_exp as i64); p];
    for _ in 0..width.pow(p as u32) {
        if coeffs.iter().any(|&c| c != 0) {
            let mut v = vec![Rational::zero(); names.len()];
            for (c, row) in coeffs.iter().zip(&reduced) {
                if *c != 0 {
                    let c = rational_from_int(*c);
                    for (vi, ri) in v.iter_mut().zip(row) {
                        *vi += &c * ri;
                    }
                }
            }
            if v.iter().all(|x| x.is_integer() && x.abs().to_integer() <= bound) {
                let mut ints = scale_to_integers(&v);
                orient(&mut ints);
                seen.insert(ints);
            }
        }
        // odometer increment
        for c in coeffs.iter_mut() {
            *c += 1;
            if *c > max_exp as i64 {
                *c = -(max_exp as i64);
            } else {
                break;
            }
        }
    }

    let mut candidates: Vec<Vec<BigInt>> = seen.into_iter().collect();
    candidates.sort_by_cached_key(|v| candidate_key(v));

    let target_idx = target.and_then(|t| names.iter().position(|n| n == t));
    let to_rat = |v: &[BigInt]| v.iter().cloned().map(Rational::from_integer).collect::<Vec<_>>();
    let mut chosen: Vec<Vec<Rational>> = Vec::new();

    if let Some(ti) = target_idx.filter(|&ti| reduced.iter().any(|r| !r[ti].is_zero())) {
        let dependent = candidates
            .iter()
            .find(|v| v[ti].abs().is_one())
            .ok_or_else(fallback)?;
        let mut dep = dependent.clone();
        if dep[ti].is_negative() {
            dep.iter_mut().for_each(|x| *x = -x.clone());
        }
        chosen.push(to_rat(&dep));
        candidates.retain(|v| v[ti].is_zero());
    }

    for v in &candidates {
        if chosen.len() == p {
            break;
        }
        let mut trial = chosen.clone();
        trial.push(to_rat(v));
        if rank(&trial) == trial.len() {
            chosen = trial;
        }
    }
    if chosen.len() < p {
        return Err(fallback());
    }
    Ok(chosen.into_iter().map(|e| PiGroup::new(names.clone(), e)).collect())
}

/// Evaluates π groups on a dataset.
///
/// The result has one zero-dimension column per group. The group containing
/// the dataset's target (if any) becomes the new target; otherwise a
/// dimensionless target column is carried through unchanged.
pub fn nondimensionalize(d: &Dataset, groups: &[PiGroup], names: &[String]) -> Result<Dataset, DimsError> {
    assert_eq!(groups.len(), names.len(), "one name per group");
    let k = d.base().len();
    let target_name = d.target_name().map(str::to_string);
    let mut columns = Vec::with_capacity(groups.len() + 1);
    let mut bad_rows = BTreeSet::new();
    let mut new_target = None;
    for (gi, g) in groups.iter().enumerate() {
        let idx: Vec<usize> = g
            .names
            .iter()
            .map(|n| d.index_of(n).ok_or_else(|| DimsError::UnknownVariable(n.clone())))
            .collect::<Result<_, _>>()?;
        let mut col = Vec::with_capacity(d.nrows());
        let mut row = vec![0.0; idx.len()];
        for r in 0..d.nrows() {
            for (slot, &c) in row.iter_mut().zip(&idx) {
                *slot = d.column(c)[r];
            }
            match g.eval_row(&row) {
                Some(v) => col.push(v),
                None => {
                    bad_rows.insert(r);
                    col.push(f64::NAN);
                }
            }
        }
        if let Some(t) = &target_name {
            if g.exponent_of(t).is_some_and(|e| !e.is_zero()) {
                new_target = Some(gi);
            }
        }
        columns.push((names[gi].clone(), Some(DimVector::zeros(k)), col));
    }
    if !bad_rows.is_empty() {
        return Err(DimsError::DomainError { rows: bad_rows.into_iter().collect() });
    }
    if new_target.is_none() {
        if let Some(ti) = d.target() {
            if d.dims(ti).is_some_and(DimVector::is_dimensionless) && !names.iter().any(|n| n == d.name(ti)) {
                columns.push((d.name(ti).to_string(), Some(DimVector::zeros(k)), d.column(ti).to_vec()));
                new_target = Some(columns.len() - 1);
            }
        }
    }
    let mut out = Dataset::from_columns(d.base().clone(), columns, new_target)
        .expect("π columns share the sample count");
    out.set_provenance(Provenance::Derived { from: d.provenance().label() });
    Ok(out)
}

/// Outcome of dimensional propagation through an expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Homogeneity {
    /// Propagated dimension; `None` when there are violations or the root is a pair.
    pub dimension: Option<DimVector>,
    pub violations: usize,
}

/// Largest denominator accepted for a constant exponent of a dimensional base.
pub const MAX_EXPONENT_DENOMINATOR: i64 = 6;

/// Propagates dimensions bottom-up and counts homogeneity violations.
///
/// `var_dims[i]` is the dimension of `Var(i)`. Constants are dimensionless.
pub fn check_homogeneity(e: &Expr, var_dims: &[DimVector]) -> Homogeneity {
    let k = var_dims.first().map_or(0, DimVector::len);
    let mut violations = 0;
    match e {
        Expr::Pair(a, b) => {
            propagate(a, var_dims, k, &mut violations);
            propagate(b, var_dims, k, &mut violations);
            Homogeneity { dimension: None, violations }
        }
        _ => {
            let d = propagate(e, var_dims, k, &mut violations);
            Homogeneity { dimension: (violations == 0).then_some(d), violations }
        }
    }
}

fn propagate(e: &Expr, dims: &[DimVector], k: usize, violations: &mut usize) -> DimVector {
    match e {
        Expr::Const(_) => DimVector::zeros(k),
        Expr::Var(i) => match dims.get(*i) {
            Some(d) => d.clone(),
            None => {
                *violations += 1;
                DimVector::zeros(k)
            }
        },
        Expr::Unary(op, a) => {
            let d = propagate(a, dims, k, violations);
            match op {
                UnaryOp::Neg | UnaryOp::Abs => d,
                UnaryOp::Sqrt => d.pow(&Rational::new(BigInt::one(), BigInt::from(2))),
                UnaryOp::Log | UnaryOp::Exp => {
                    if !d.is_dimensionless() {
                        *violations += 1;
                    }
                    DimVector::zeros(k)
                }
            }
        }
        Expr::Binary(op, a, b) => {
            let da = propagate(a, dims, k, violations);
            let db = propagate(b, dims, k, violations);
            match op {
                BinaryOp::Add | BinaryOp::Sub => {
                    if da != db {
                        *violations += 1;
                    }
                    da
                }
                BinaryOp::Mul => da.mul(&db),
                BinaryOp::Div => da.div(&db),
                BinaryOp::Pow => {
                    if !db.is_dimensionless() {
                        *violations += 1;
                    }
                    if da.is_dimensionless() {
                        return da;
                    }
                    match b.constant_value().and_then(|c| rationalize(c, MAX_EXPONENT_DENOMINATOR, 1e-9)) {
                        Some(r) => da.pow(&r),
                        None => {
                            *violations += 1;
                            DimVector::zeros(k)
                        }
                    }
                }
            }
        }
        Expr::Pair(a, b) => {
            // only legal at the root; treat a nested pair as a violation
            *violations += 1;
            propagate(a, dims, k, violations);
            propagate(b, dims, k, violations);
            DimVector::zeros(k)
        }
    }
}
