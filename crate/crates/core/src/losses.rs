//! Hierarchical, implicit and transformation losses.
//!
//! Every loss is a pure function of (expression, data, spec). Invalid
//! candidates score `+inf` rather than erroring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dims::{check_homogeneity, rank, DimVector, Rational};
use crate::expr::{detect_trivial_patterns, BinaryOp, ConstantBand, EvalResult, Expr};
use crate::polyfit::{fit_poly, fit_poly_sweep, mean_relative_error, PolyModel, PolyfitError};

/// Candidates with a larger share of faulted samples score `+inf`.
pub const MAX_FAULT_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegreePolicy {
    Fixed { degree: u32 },
    /// Lowest degree in `1..=max` reaching `r2_threshold`.
    Sweep { max: u32, r2_threshold: f64 },
}

impl Default for DegreePolicy {
    fn default() -> Self {
        DegreePolicy::Sweep { max: 5, r2_threshold: 0.99 }
    }
}

impl DegreePolicy {
    pub fn fit(&self, x: &[Vec<f64>], y: &[f64]) -> Result<PolyModel, PolyfitError> {
        match *self {
            DegreePolicy::Fixed { degree } => fit_poly(x, y, degree),
            DegreePolicy::Sweep { max, r2_threshold } => fit_poly_sweep(x, y, max, r2_threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalSpec {
    pub intermediate_count: usize,
    #[serde(default)]
    pub degree: DegreePolicy,
    #[serde(default)]
    pub log_space: bool,
    /// Columns fed to the polynomial next to the intermediates.
    #[serde(default)]
    pub context: Vec<usize>,
}

impl Default for HierarchicalSpec {
    fn default() -> Self {
        HierarchicalSpec { intermediate_count: 1, degree: DegreePolicy::default(), log_space: false, context: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub sens: f64,
    pub dim: f64,
    pub rule: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        PenaltyWeights { sens: 1.0, dim: 1.0, rule: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicitSpec {
    /// Relative sensitivity threshold.
    pub tau: f64,
    pub perturb_band: (f64, f64),
    pub perturb_samples: usize,
    pub weights: PenaltyWeights,
    /// When set, the search replaces `weights` each iteration by this factor
    /// times the median base term of the penalty-free population members.
    pub auto_weight_factor: Option<f64>,
    pub positivity_eps: f64,
    /// A variable whose root-mean-square elasticity on ln|F| is below this is inert.
    #[serde(default = "default_elasticity_floor")]
    pub elasticity_floor: f64,
    pub constant_band: ConstantBand,
    /// Dimension of every data column; `None` disables the homogeneity penalty.
    pub var_dims: Option<Vec<DimVector>>,
    pub seed: u64,
}

fn default_elasticity_floor() -> f64 {
    0.1
}

impl Default for ImplicitSpec {
    fn default() -> Self {
        ImplicitSpec {
            tau: 1e-3,
            perturb_band: (0.8, 1.2),
            perturb_samples: 16,
            weights: PenaltyWeights::default(),
            auto_weight_factor: Some(10.0),
            positivity_eps: 1e-30,
            elasticity_floor: default_elasticity_floor(),
            constant_band: ConstantBand::default(),
            var_dims: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    /// Order of the target polynomial.
    pub order: u32,
    /// Baseline g(x) over data columns.
    pub baseline: Expr,
    pub log_space: bool,
    /// Branches held fixed during search (SR1, SR2).
    #[serde(default)]
    pub pins: [Option<Expr>; 2],
}

impl TransformSpec {
    pub fn new(order: u32, baseline: Expr, log_space: bool) -> Self {
        assert!((1..=4).contains(&order), "transformation order must be in 1..=4");
        TransformSpec { order, baseline, log_space, pins: [None, None] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LossSpec {
    /// Mean squared error of the expression against the target.
    SquaredError,
    Hierarchical(HierarchicalSpec),
    Implicit(ImplicitSpec),
    Transformation(TransformSpec),
}

impl LossSpec {
    pub fn mode(&self) -> &'static str {
        match self {
            LossSpec::SquaredError => "squared_error",
            LossSpec::Hierarchical(_) => "hierarchical",
            LossSpec::Implicit(_) => "implicit",
            LossSpec::Transformation(_) => "transformation",
        }
    }

    /// Whether candidates must be pair-rooted.
    pub fn wants_pair(&self) -> bool {
        match self {
            LossSpec::Hierarchical(h) => h.intermediate_count == 2,
            LossSpec::Transformation(_) => true,
            _ => false,
        }
    }

    /// Whether the target column may appear in candidates.
    pub fn uses_target(&self) -> bool {
        matches!(self, LossSpec::Implicit(_))
    }

    pub fn pins(&self) -> [Option<&Expr>; 2] {
        match self {
            LossSpec::Transformation(t) => [t.pins[0].as_ref(), t.pins[1].as_ref()],
            _ => [None, None],
        }
    }
}

/// A loss split into its base term and unweighted penalty counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub base: f64,
    /// Penalty units (sensitivity, dimension, rule); zero outside implicit mode.
    pub units: [f64; 3],
}

impl Score {
    pub const INFINITE: Score = Score { base: f64::INFINITY, units: [0.0; 3] };

    pub fn plain(base: f64) -> Score {
        Score { base, units: [0.0; 3] }
    }

    pub fn total(&self, w: &PenaltyWeights) -> f64 {
        if !self.base.is_finite() {
            return f64::INFINITY;
        }
        let t = self.base + w.sens * self.units[0] + w.dim * self.units[1] + w.rule * self.units[2];
        if t.is_nan() { f64::INFINITY } else { t }
    }
}

/// Score of `e` under `spec`.
pub fn score(e: &Expr, data: &Dataset, spec: &LossSpec) -> Score {
    match spec {
        LossSpec::SquaredError => Score::plain(loss_squared(e, data)),
        LossSpec::Hierarchical(h) => Score::plain(loss_hierarchical(e, data, h)),
        LossSpec::Implicit(s) => implicit_score(e, data, s),
        LossSpec::Transformation(t) => Score::plain(loss_transformation(e, data, t)),
    }
}

/// Loss of `e` under `spec` with the spec's own penalty weights.
pub fn loss(e: &Expr, data: &Dataset, spec: &LossSpec) -> f64 {
    let s = score(e, data, spec);
    match spec {
        LossSpec::Implicit(i) => s.total(&i.weights),
        _ => s.total(&PenaltyWeights::default()),
    }
}

pub(crate) fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

fn too_faulty(r: &EvalResult) -> bool {
    r.fault_fraction() > MAX_FAULT_FRACTION
}

fn loss_squared(e: &Expr, data: &Dataset) -> f64 {
    let Some(y) = data.target_values() else {
        return f64::INFINITY;
    };
    let r = e.evaluate(data.columns());
    if too_faulty(&r) || r.values.len() == r.domain_fault_count {
        return f64::INFINITY;
    }
    let (mut s, mut n) = (0.0, 0usize);
    for (v, t) in r.values.iter().zip(y) {
        if v.is_finite() {
            s += (v - t).powi(2);
            n += 1;
        }
    }
    let mse = s / n as f64;
    if mse.is_finite() { mse } else { f64::INFINITY }
}

/// Fitted polynomial over the intermediates plus the data it was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalFit {
    pub model: PolyModel,
    /// Polynomial inputs (intermediates then context), in fit space.
    pub inputs: Vec<Vec<f64>>,
    /// Target in fit space.
    pub target: Vec<f64>,
    /// Rows of the dataset that were used.
    pub rows: Vec<usize>,
    pub log_space: bool,
}

impl HierarchicalFit {
    /// Fit-space RSS divided by n·Var(target).
    pub fn normalized_rss(&self) -> f64 {
        self.model.rss / (self.target.len() as f64 * variance(&self.target))
    }

    /// Predictions mapped back to target units.
    pub fn predictions(&self) -> Vec<f64> {
        let p = self.model.predict(&self.inputs);
        if self.log_space { p.into_iter().map(f64::exp).collect() } else { p }
    }

    /// R² and mean relative error in target units.
    pub fn stats(&self) -> (f64, f64) {
        let yhat = self.predictions();
        let y: Vec<f64> = if self.log_space { self.target.iter().map(|v| v.exp()).collect() } else { self.target.clone() };
        let r2 = crate::polyfit::r_squared(&y, &yhat).unwrap_or(f64::NAN);
        let mre = mean_relative_error(&y, &yhat).unwrap_or(f64::NAN);
        (r2, mre)
    }
}

/// Fits the target on the branch values of `e` (one branch, or both branches of a pair).
pub fn hierarchical_fit(e: &Expr, data: &Dataset, spec: &HierarchicalSpec) -> Option<HierarchicalFit> {
    let y = data.target_values()?;
    let branches = e.branches();
    if branches.len() != spec.intermediate_count {
        return None;
    }
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(branches.len() + spec.context.len());
    for b in branches {
        let r = b.evaluate(data.columns());
        if too_faulty(&r) {
            return None;
        }
        cols.push(r.values);
    }
    for &c in &spec.context {
        cols.push(data.column(c).to_vec());
    }
    let n = y.len();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let ok = cols.iter().all(|c| c[i].is_finite());
        if !ok {
            continue;
        }
        if spec.log_space && (y[i] <= 0.0 || cols.iter().any(|c| c[i] <= 0.0)) {
            return None;
        }
        rows.push(i);
    }
    let tf = |v: f64| if spec.log_space { v.ln() } else { v };
    let inputs: Vec<Vec<f64>> = cols.iter().map(|c| rows.iter().map(|&i| tf(c[i])).collect()).collect();
    let target: Vec<f64> = rows.iter().map(|&i| tf(y[i])).collect();
    let model = spec.degree.fit(&inputs, &target).ok()?;
    Some(HierarchicalFit { model, inputs, target, rows, log_space: spec.log_space })
}

/// Residual sum of squares of the polynomial fit over the intermediates,
/// normalized by sample count and target variance.
pub fn loss_hierarchical(e: &Expr, data: &Dataset, spec: &HierarchicalSpec) -> f64 {
    match hierarchical_fit(e, data, spec) {
        Some(f) => {
            let l = f.normalized_rss();
            if l.is_finite() { l.max(0.0) } else { f64::INFINITY }
        }
        None => f64::INFINITY,
    }
}

/// ln|F| on the clean samples, or `None` when F is unusable as an invariant.
fn log_invariant(e: &Expr, columns: &[Vec<f64>], eps: f64) -> Option<Vec<f64>> {
    let r = e.evaluate(columns);
    if too_faulty(&r) {
        return None;
    }
    let vals: Vec<f64> = r.values.into_iter().filter(|v| v.is_finite()).collect();
    if vals.is_empty() || vals.iter().any(|v| v.abs() < eps) {
        return None;
    }
    let pos = vals[0] > 0.0;
    if vals.iter().any(|v| (*v > 0.0) != pos) {
        return None;
    }
    Some(vals.into_iter().map(|v| v.abs().ln()).collect())
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Number of variables of `e` whose perturbation barely moves ln|F|.
///
/// For each variable, `perturb_samples` copies of the data are drawn with
/// that column multiplied by factors uniform in the perturbation band; a
/// penalty unit is scored when the mean squared change of ln|F| falls below
/// `tau * (Var ln|F| + 1e-12)`, or below `elasticity_floor^2` times the mean
/// squared log of the perturbation factors.
pub fn p_sens(e: &Expr, data: &Dataset, spec: &ImplicitSpec) -> usize {
    let Some(base) = log_invariant(e, data.columns(), spec.positivity_eps) else {
        return 0;
    };
    let r0 = e.evaluate(data.columns());
    let reference = spec.tau * (variance(&base) + 1e-12);
    let hash = e.structural_hash();
    let mut count = 0;
    for var in e.variables() {
        if var >= data.ncols() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed ^ mix(hash ^ mix(var as u64))));
        let mut cols = data.columns().to_vec();
        let (mut acc, mut unit, mut n) = (0.0, 0.0, 0usize);
        let mut factors = vec![1.0; data.nrows()];
        for _ in 0..spec.perturb_samples {
            for ((x, orig), u) in cols[var].iter_mut().zip(data.column(var)).zip(factors.iter_mut()) {
                *u = rng.random_range(spec.perturb_band.0..spec.perturb_band.1);
                *x = orig * *u;
            }
            let r = e.evaluate(&cols);
            for ((a, b), u) in r0.values.iter().zip(&r.values).zip(&factors) {
                if a.is_finite() && b.is_finite() && *a != 0.0 && *b != 0.0 {
                    acc += (a.abs().ln() - b.abs().ln()).powi(2);
                    unit += u.ln().powi(2);
                    n += 1;
                }
            }
        }
        let msc = acc / n.max(1) as f64;
        if n == 0 || msc < reference || msc < spec.elasticity_floor.powi(2) * unit / n as f64 {
            count += 1;
        }
    }
    count
}

/// Homogeneity violations of `e`; zero when no dimensions are configured.
pub fn p_dim(e: &Expr, var_dims: Option<&[DimVector]>) -> usize {
    var_dims.map_or(0, |d| check_homogeneity(e, d).violations)
}

pub fn p_rule(e: &Expr, band: &ConstantBand) -> usize {
    detect_trivial_patterns(e, band)
}

/// Number of `+`/`-` nodes in which one operand never reaches a tenth of the
/// other's magnitude on any clean sample. Such a sum only flattens F towards
/// a constant and is counted as a nonsensical operation.
pub fn negligible_summands(e: &Expr, columns: &[Vec<f64>]) -> usize {
    let mut count = 0;
    e.visit(&mut |node| {
        if let Expr::Binary(BinaryOp::Add | BinaryOp::Sub, a, b) = node {
            let (va, vb) = (a.evaluate(columns).values, b.evaluate(columns).values);
            let rows: Vec<(f64, f64)> = va
                .into_iter()
                .zip(vb)
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| (x.abs(), y.abs()))
                .collect();
            let dominated = |f: &dyn Fn(&(f64, f64)) -> bool| !rows.is_empty() && rows.iter().all(f);
            if dominated(&|(x, y)| *x >= 10.0 * y) || dominated(&|(x, y)| *y >= 10.0 * x) {
                count += 1;
            }
        }
    });
    count
}

/// 1 when `e` is dimensionless and its variables admit a single π group:
/// such a candidate is a function of one varying group and can only look
/// invariant by being flattened.
pub fn single_group(e: &Expr, var_dims: Option<&[DimVector]>) -> usize {
    let Some(dims) = var_dims else {
        return 0;
    };
    let h = check_homogeneity(e, dims);
    if !h.dimension.is_some_and(|d| d.is_dimensionless()) {
        return 0;
    }
    let vars: Vec<usize> = e.variables().into_iter().filter(|&v| v < dims.len()).collect();
    let rows: Vec<Vec<Rational>> = vars.iter().map(|&v| dims[v].exponents().to_vec()).collect();
    usize::from(vars.len() - rank(&rows) == 1)
}

/// Implicit-loss parts: Var[ln|F|] plus unweighted penalty counts.
pub fn implicit_score(e: &Expr, data: &Dataset, spec: &ImplicitSpec) -> Score {
    if e.is_pair() || e.variables().len() < 2 {
        return Score::INFINITE;
    }
    let Some(logs) = log_invariant(e, data.columns(), spec.positivity_eps) else {
        return Score::INFINITE;
    };
    let base = variance(&logs);
    if !base.is_finite() {
        return Score::INFINITE;
    }
    Score {
        base,
        units: [
            p_sens(e, data, spec) as f64,
            p_dim(e, spec.var_dims.as_deref()) as f64,
            (p_rule(e, &spec.constant_band)
                + negligible_summands(e, data.columns())
                + single_group(e, spec.var_dims.as_deref())) as f64,
        ],
    }
}

pub fn loss_implicit(e: &Expr, data: &Dataset, spec: &ImplicitSpec) -> f64 {
    implicit_score(e, data, spec).total(&spec.weights)
}

/// A fitted transformation `y*SR1 = F(g*SR2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformFit {
    pub model: PolyModel,
    /// Left side y·SR1 in fit space.
    pub lhs: Vec<f64>,
    /// Right-side argument g·SR2 in fit space.
    pub rhs: Vec<f64>,
    pub sr1: Vec<f64>,
    pub y: Vec<f64>,
    pub rows: Vec<usize>,
    pub log_space: bool,
}

impl TransformFit {
    /// Target reconstructed from the fitted relation.
    pub fn reconstructed(&self) -> Vec<f64> {
        let f = self.model.predict(&[&self.rhs]);
        f.iter()
            .zip(&self.sr1)
            .map(|(v, s)| if self.log_space { v.exp() / s } else { v / s })
            .collect()
    }

    pub fn mre(&self) -> f64 {
        mean_relative_error(&self.y, &self.reconstructed()).unwrap_or(f64::NAN)
    }

    /// Fit-space RSS over n·Var of the target (logged in log space).
    pub fn normalized_rss(&self) -> f64 {
        let t: Vec<f64> = if self.log_space { self.y.iter().map(|v| v.ln()).collect() } else { self.y.clone() };
        self.model.rss / (t.len() as f64 * variance(&t))
    }
}

/// Fits the transformation for pair `e`, with pinned branches substituted.
pub fn transformation_fit(e: &Expr, data: &Dataset, spec: &TransformSpec) -> Option<TransformFit> {
    let y = data.target_values()?;
    let Expr::Pair(a, b) = e else {
        return None;
    };
    let sr1 = spec.pins[0].as_ref().unwrap_or(a);
    let sr2 = spec.pins[1].as_ref().unwrap_or(b);
    let r1 = sr1.evaluate(data.columns());
    let r2 = sr2.evaluate(data.columns());
    let rg = spec.baseline.evaluate(data.columns());
    if too_faulty(&r1) || too_faulty(&r2) || too_faulty(&rg) {
        return None;
    }
    let mut rows = Vec::new();
    let (mut lhs, mut rhs, mut s1, mut ys) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..y.len() {
        let (u, v, g) = (r1.values[i], r2.values[i], rg.values[i]);
        if !(u.is_finite() && v.is_finite() && g.is_finite()) {
            continue;
        }
        let (l, r) = (y[i] * u, g * v);
        if spec.log_space {
            if l <= 0.0 || r <= 0.0 {
                return None;
            }
            lhs.push(l.ln());
            rhs.push(r.ln());
        } else {
            lhs.push(l);
            rhs.push(r);
        }
        s1.push(u);
        ys.push(y[i]);
        rows.push(i);
    }
    if lhs.iter().chain(&rhs).any(|v| !v.is_finite()) {
        return None;
    }
    let model = fit_poly(&[&rhs], &lhs, spec.order).ok()?;
    Some(TransformFit { model, lhs, rhs, sr1: s1, y: ys, rows, log_space: spec.log_space })
}

/// ‖y·SR1 − F_m(g·SR2)‖² in (log) fit space, normalized by n·Var of the target.
pub fn loss_transformation(e: &Expr, data: &Dataset, spec: &TransformSpec) -> f64 {
    match transformation_fit(e, data, spec) {
        Some(f) => {
            let l = f.normalized_rss();
            if l.is_finite() { l.max(0.0) } else { f64::INFINITY }
        }
        None => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dims::{BaseDims, DimVector};
    use crate::expr::parse;

    fn xy(x: Vec<Vec<f64>>, y: Vec<f64>) -> Dataset {
        Dataset::from_xy(x, Some(y)).unwrap()
    }

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn hierarchical_exact_intermediate() {
        let x0 = grid(40, 0.5, 2.0);
        let x1: Vec<f64> = x0.iter().map(|v| 1.0 + (v * 7.0).sin() * 0.3).collect();
        let u: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| a * b).collect();
        let y: Vec<f64> = u.iter().map(|u| u * u + 3.0 * u).collect();
        let d = xy(vec![x0, x1], y);
        let spec = HierarchicalSpec { degree: DegreePolicy::Fixed { degree: 2 }, ..Default::default() };
        assert!(loss_hierarchical(&parse("x0*x1").unwrap(), &d, &spec) <= 1e-18);
        assert_eq!(loss_hierarchical(&parse("3").unwrap(), &d, &spec), f64::INFINITY);
        assert!(loss_hierarchical(&parse("x0").unwrap(), &d, &spec) > 1e-4);
    }

    #[test]
    fn implicit_rejects_single_variable_and_constants() {
        let d = xy(vec![grid(10, 1.0, 2.0)], grid(10, 3.0, 4.0));
        let spec = ImplicitSpec::default();
        assert_eq!(loss_implicit(&parse("5").unwrap(), &d, &spec), f64::INFINITY);
        assert_eq!(loss_implicit(&parse("x0").unwrap(), &d, &spec), f64::INFINITY);
        assert!(loss_implicit(&parse("x0*x1").unwrap(), &d, &spec).is_finite());
    }

    #[test]
    fn sensitivity_penalty() {
        let x0 = grid(30, 1.0, 3.0);
        let x1: Vec<f64> = x0.iter().map(|v| 2.0 + (v * 5.0).cos()).collect();
        let d = Dataset::from_xy(vec![x0, x1], None).unwrap();
        let spec = ImplicitSpec::default();
        assert_eq!(p_sens(&parse("x0 + 1e-9*x1").unwrap(), &d, &spec), 1);
        assert_eq!(p_sens(&parse("x0*x1").unwrap(), &d, &spec), 0);
        assert_eq!(p_sens(&parse("x0*x1").unwrap(), &d, &spec), p_sens(&parse("x0*x1").unwrap(), &d, &spec));
        // near-constant forms are inert in every variable they use
        assert_eq!(p_sens(&parse("(x0 + 1e6*x1)/x1").unwrap(), &d, &spec), 2);
        assert_eq!(p_sens(&parse("x0^(x1*1e-6)").unwrap(), &d, &spec), 2);
        assert_eq!(p_sens(&parse("(x0*x1)^0.001").unwrap(), &d, &spec), 2);
    }

    #[test]
    fn dimension_and_rule_penalties() {
        let dims = vec![DimVector::from_ints(&[0, 1, -1, 0]), DimVector::from_ints(&[0, 1, 0, 0])];
        let _ = BaseDims::default();
        assert_eq!(p_dim(&parse("x0+x1").unwrap(), Some(&dims)), 1);
        assert_eq!(p_dim(&parse("log(x0)").unwrap(), Some(&dims)), 1);
        assert_eq!(p_dim(&parse("x0+x1").unwrap(), None), 0);
        let band = ConstantBand::default();
        assert_eq!(p_rule(&parse("x0-x0+x1").unwrap(), &band), 1);
        assert_eq!(p_rule(&parse("1e7*x0").unwrap(), &band), 1);
        assert_eq!(p_rule(&parse("x0^2/x1^3").unwrap(), &band), 0);
        let cols = vec![vec![1.0, 2.0, 3.0], vec![0.5, 1.0, 0.001]];
        assert_eq!(negligible_summands(&parse("x0 + x1").unwrap(), &cols), 0);
        assert_eq!(negligible_summands(&parse("(x1 - 14*x0)/x0").unwrap(), &cols), 1);
        assert_eq!(negligible_summands(&parse("x1/x0 + 20").unwrap(), &cols), 1);
    }

    #[test]
    fn transformation_of_exact_polynomial() {
        let g = grid(25, 1.0, 4.0);
        let y: Vec<f64> = g.iter().map(|v| 2.0 * v * v - v + 5.0).collect();
        let d = xy(vec![g], y);
        let spec = TransformSpec::new(2, parse("x0").unwrap(), false);
        assert!(loss_transformation(&parse("pair(1, 1)").unwrap(), &d, &spec) <= 1e-18);
        let fit = transformation_fit(&parse("pair(1, 1)").unwrap(), &d, &spec).unwrap();
        assert!(fit.mre() < 1e-12);
        assert_eq!(loss_transformation(&parse("x0").unwrap(), &d, &spec), f64::INFINITY);
    }

    #[test]
    fn log_space_transformation_recovers_power_law() {
        // y = 0.1 * g^(1/3) / s, s = x1: log(y*s) is linear in log(g)
        let g = grid(30, 10.0, 1e4);
        let s: Vec<f64> = g.iter().map(|v| 1.0 + (v.ln() * 3.0).sin().abs()).collect();
        let y: Vec<f64> = g.iter().zip(&s).map(|(g, s)| 0.1 * g.powf(1.0 / 3.0) / s).collect();
        let d = xy(vec![g, s], y);
        let spec = TransformSpec::new(1, parse("x0").unwrap(), true);
        let fit = transformation_fit(&parse("pair(x1, 1)").unwrap(), &d, &spec).unwrap();
        let (b0, b) = fit.model.linear_coefficients().unwrap();
        assert!((b[0] - 1.0 / 3.0).abs() < 1e-10);
        assert!((b0 - 0.1f64.ln()).abs() < 1e-10);
        let l1 = loss_transformation(&parse("pair(x1, 1)").unwrap(), &d, &spec);
        let l2 = loss_transformation(&parse("pair(7.5*x1, 1)").unwrap(), &d, &spec);
        assert!((l1 - l2).abs() <= 1e-10);
    }
}
