//! Island-model evolutionary search over expression trees.
//!
//! Each island runs steady-state tournament evolution with its own ChaCha
//! stream seeded from the master seed and the island index. Islands advance
//! one iteration at a time in parallel and exchange migrants in index order
//! at fixed iteration boundaries, so results do not depend on the number of
//! worker threads.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::expr::{simplify, BinaryOp, Expr, UnaryOp};
use crate::losses::{self, LossSpec, PenaltyWeights, Score};

/// Losses are floored here before taking logarithms.
pub const LOSS_FLOOR: f64 = 1e-30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    ConfigInvalid(String),
    #[error("loss incompatible with this search: {0}")]
    IncompatibleLoss(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationProbs {
    pub operator_swap: f64,
    pub constant_jitter: f64,
    pub subtree_replace: f64,
    pub hoist: f64,
    pub variable_swap: f64,
    pub crossover: f64,
}

impl Default for MutationProbs {
    fn default() -> Self {
        MutationProbs {
            operator_swap: 0.25,
            constant_jitter: 0.25,
            subtree_replace: 0.2,
            hoist: 0.15,
            variable_swap: 0.05,
            crossover: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variation {
    OperatorSwap,
    ConstantJitter,
    SubtreeReplace,
    Hoist,
    VariableSwap,
    Crossover,
}

impl MutationProbs {
    fn as_array(&self) -> [(f64, Variation); 6] {
        [
            (self.operator_swap, Variation::OperatorSwap),
            (self.constant_jitter, Variation::ConstantJitter),
            (self.subtree_replace, Variation::SubtreeReplace),
            (self.hoist, Variation::Hoist),
            (self.variable_swap, Variation::VariableSwap),
            (self.crossover, Variation::Crossover),
        ]
    }

    pub fn sum(&self) -> f64 {
        self.as_array().iter().map(|(p, _)| p).sum()
    }

    fn pick(&self, u: f64) -> Variation {
        let mut acc = 0.0;
        for (p, v) in self.as_array() {
            acc += p;
            if u < acc {
                return v;
            }
        }
        Variation::SubtreeReplace
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Total across islands.
    pub population_size: usize,
    pub iterations: usize,
    pub tournament_size: usize,
    pub mutation: MutationProbs,
    pub unary_ops: Vec<UnaryOp>,
    pub binary_ops: Vec<BinaryOp>,
    /// Range for freshly drawn real constants.
    pub const_range: (f64, f64),
    /// Probability that a fresh constant is a small nonzero integer.
    pub integer_const_prob: f64,
    /// Keep every constant a small integer: fresh constants are integers,
    /// jitter steps by one, and constant optimization is off.
    pub integer_constants: bool,
    /// Upper bound on the complexity of each branch.
    pub max_complexity: usize,
    pub max_depth: usize,
    pub init_depth: usize,
    pub parsimony: f64,
    pub islands: usize,
    pub migration_interval: usize,
    /// Constant optimization of tournament winners every this many iterations.
    pub optimize_every: usize,
    pub const_restarts: usize,
    /// Independent searches (derived seeds) whose fronts are merged.
    pub restarts: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
    /// Columns candidates may reference; defaults to the inputs (all columns in implicit mode).
    pub variables: Option<Vec<usize>>,
    /// Per-branch column restrictions for pair searches.
    pub branch_variables: Option<[Vec<usize>; 2]>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            population_size: 1000,
            iterations: 40,
            tournament_size: 7,
            mutation: MutationProbs::default(),
            unary_ops: vec![UnaryOp::Sqrt, UnaryOp::Log, UnaryOp::Exp],
            binary_ops: BinaryOp::ALL.to_vec(),
            const_range: (-2.0, 2.0),
            integer_const_prob: 0.5,
            integer_constants: false,
            max_complexity: 20,
            max_depth: 10,
            init_depth: 3,
            parsimony: 0.01,
            islands: 4,
            migration_interval: 5,
            optimize_every: 8,
            const_restarts: 2,
            restarts: 1,
            seed: 0,
            threads: 0,
            variables: None,
            branch_variables: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::ConfigInvalid(m.to_string()));
        let p = self.mutation.as_array();
        if p.iter().any(|(x, _)| !(0.0..=1.0).contains(x)) || (self.mutation.sum() - 1.0).abs() > 1e-9 {
            return bad("mutation probabilities must be in [0, 1] and sum to 1");
        }
        if self.islands == 0 {
            return bad("island count must be at least 1");
        }
        if self.max_complexity < 3 {
            return bad("max complexity must be at least 3");
        }
        if self.population_size < 2 * self.islands {
            return bad("population must hold at least two individuals per island");
        }
        if self.tournament_size == 0 || self.tournament_size > self.population_size / self.islands {
            return bad("tournament size must be in 1..=island population");
        }
        if !(self.const_range.0 < self.const_range.1) {
            return bad("constant range must be nonempty");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if self.migration_interval == 0 || self.optimize_every == 0 || self.init_depth == 0 || self.max_depth == 0 {
            return bad("intervals and depths must be positive");
        }
        if !(0.0..=1.0).contains(&self.integer_const_prob) || !(self.parsimony >= 0.0) {
            return bad("probabilities and parsimony must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontEntry {
    pub expr: Expr,
    pub loss: f64,
    pub complexity: usize,
}

/// Nondominated (complexity, loss) archive: strictly increasing complexity,
/// strictly decreasing loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    entries: Vec<FrontEntry>,
}

impl ParetoFront {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[FrontEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lowest-loss entry.
    pub fn best(&self) -> Option<&FrontEntry> {
        self.entries.last()
    }

    /// Inserts unless dominated; returns whether the entry was kept.
    pub fn insert(&mut self, expr: Expr, loss: f64, complexity: usize) -> bool {
        if loss.is_nan() || loss == f64::INFINITY {
            return false;
        }
        if self.entries.iter().any(|e| e.complexity <= complexity && e.loss <= loss) {
            return false;
        }
        self.entries.retain(|e| !(e.complexity >= complexity && e.loss >= loss));
        let at = self.entries.partition_point(|e| e.complexity < complexity);
        self.entries.insert(at, FrontEntry { expr, loss, complexity });
        true
    }

    /// Checks the ordering invariants.
    pub fn is_valid(&self) -> bool {
        self.entries.windows(2).all(|w| w[0].complexity < w[1].complexity && w[0].loss > w[1].loss)
    }
}

/// Knee score of every front entry: log-loss drop per unit of added complexity.
pub fn knee_scores(front: &ParetoFront) -> Vec<f64> {
    let e = front.entries();
    (0..e.len())
        .map(|i| {
            if i == 0 {
                return 0.0;
            }
            let (a, b) = (&e[i - 1], &e[i]);
            (a.loss.max(LOSS_FLOOR).ln() - b.loss.max(LOSS_FLOOR).ln()) / (b.complexity - a.complexity) as f64
        })
        .collect()
}

/// Entry with the highest knee score; ties go to lower complexity.
pub fn select_candidate(front: &ParetoFront) -> Option<(&FrontEntry, f64)> {
    let scores = knee_scores(front);
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best.map(|i| (&front.entries()[i], scores[i]))
}

/// Central finite-difference gradient with step `1e-6 * max(|x_i|, 1e-3)`.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut z = x.to_vec();
    let f0 = f(x);
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1e-3);
        z[i] = x[i] + h;
        let fp = f(&z);
        z[i] = x[i] - h;
        let fm = f(&z);
        z[i] = x[i];
        g[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) if f0.is_finite() => (fp - f0) / h,
            (false, true) if f0.is_finite() => (f0 - fm) / h,
            _ => 0.0,
        };
    }
    g
}

/// Quasi-Newton descent with BFGS updates, Armijo backtracking and
/// finite-difference gradients. Non-finite objective values count as `+inf`.
pub fn bfgs_minimize(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], max_iter: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() { v } else { f64::INFINITY }
    };
    let mut x = DVector::from_column_slice(x0);
    let mut fx = eval(x0);
    if n == 0 || !fx.is_finite() {
        return (x0.to_vec(), fx);
    }
    let mut g = DVector::from_vec(fd_gradient(f, x.as_slice()));
    let mut h = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_iter {
        if g.norm() <= 1e-14 * (1.0 + fx.abs()) {
            break;
        }
        let mut p = -(&h * &g);
        let mut slope = g.dot(&p);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            p = -g.clone();
            slope = g.dot(&p);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn = &x + &p * alpha;
            let fnew = eval(xn.as_slice());
            if fnew <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fnew));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            break;
        };
        let gn = DVector::from_vec(fd_gradient(f, xn.as_slice()));
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - &s * y.transpose() * rho;
            let b = &i - &y * s.transpose() * rho;
            h = &a * &h * &b + &s * s.transpose() * rho;
        }
        let done = (fx - fnew).abs() <= 1e-15 * fx.abs().max(1e-300);
        x = xn;
        fx = fnew;
        g = gn;
        if done {
            break;
        }
    }
    (x.as_slice().to_vec(), fx)
}

/// Optimizes the constants flagged in `mask` (pre-order); returns `e`
/// unchanged unless the loss strictly improves.
pub fn optimize_constants_masked(e: &Expr, mask: &[bool], loss: &LossSpec, data: &Dataset, restarts: usize) -> Expr {
    let c0 = e.constants();
    let free: Vec<usize> = (0..c0.len()).filter(|&i| mask.get(i).copied().unwrap_or(false)).collect();
    if free.is_empty() {
        return e.clone();
    }
    let objective = |z: &[f64]| {
        let mut c = c0.clone();
        for (k, &i) in free.iter().enumerate() {
            c[i] = z[k];
        }
        losses::loss(&e.with_constants(&c), data, loss)
    };
    let z0: Vec<f64> = free.iter().map(|&i| c0[i]).collect();
    let start_loss = objective(&z0);
    let mut best = (z0.clone(), start_loss);
    let mut rng = ChaCha8Rng::seed_from_u64(e.structural_hash());
    let normal = Normal::new(0.0, 0.5).expect("valid normal");
    for r in 0..restarts.max(1) {
        let start: Vec<f64> = if r == 0 {
            z0.clone()
        } else {
            z0.iter()
                .map(|v| {
                    let k = normal.sample(&mut rng);
                    if *v == 0.0 { k } else { v * (1.0 + k) }
                })
                .collect()
        };
        let (z, fz) = bfgs_minimize(&objective, &start, 60);
        if fz < best.1 {
            best = (z, fz);
        }
    }
    if best.1 < start_loss {
        let mut c = c0;
        for (k, &i) in free.iter().enumerate() {
            c[i] = best.0[k];
        }
        e.with_constants(&c)
    } else {
        e.clone()
    }
}

/// Optimizes every constant of `e`.
pub fn optimize_constants(e: &Expr, loss: &LossSpec, data: &Dataset, restarts: usize) -> Expr {
    let mask = vec![true; e.constants().len()];
    optimize_constants_masked(e, &mask, loss, data, restarts)
}

/// Per-iteration progress report.
#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    pub iteration: usize,
    pub best_loss: f64,
    pub front_size: usize,
}

#[derive(Debug, Clone)]
struct Individual {
    expr: Expr,
    score: Score,
    loss: f64,
    complexity: usize,
}

impl Individual {
    fn fitness(&self, parsimony: f64) -> f64 {
        self.loss * (1.0 + parsimony * self.complexity as f64)
    }
}

struct Ctx<'a> {
    data: &'a Dataset,
    loss: &'a LossSpec,
    cfg: &'a EngineConfig,
    pair: bool,
    vars: [Vec<usize>; 2],
    pins: [Option<Expr>; 2],
}

impl Ctx<'_> {
    fn weighted(&self, s: &Score, w: &PenaltyWeights) -> f64 {
        s.total(w)
    }

    fn evaluate(&self, expr: Expr, w: &PenaltyWeights) -> Individual {
        let score = losses::score(&expr, self.data, self.loss);
        let loss = self.weighted(&score, w);
        let complexity = expr.complexity();
        Individual { expr, score, loss, complexity }
    }

    fn free_branches(&self) -> Vec<usize> {
        if self.pair {
            (0..2).filter(|&b| self.pins[b].is_none()).collect()
        } else {
            vec![0]
        }
    }

    fn within_limits(&self, e: &Expr) -> bool {
        e.branches().iter().all(|b| b.complexity() <= self.cfg.max_complexity && b.depth() <= self.cfg.max_depth)
    }

    fn random_const(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.cfg.integer_constants || rng.random_bool(self.cfg.integer_const_prob) {
            let k = rng.random_range(1..=3) as f64;
            if rng.random_bool(0.5) { k } else { -k }
        } else {
            rng.random_range(self.cfg.const_range.0..self.cfg.const_range.1)
        }
    }

    fn random_leaf(&self, rng: &mut ChaCha8Rng, branch: usize) -> Expr {
        let vars = &self.vars[branch];
        if vars.is_empty() || rng.random_bool(0.25) {
            Expr::Const(self.random_const(rng))
        } else {
            Expr::Var(vars[rng.random_range(0..vars.len())])
        }
    }

    fn random_tree(&self, rng: &mut ChaCha8Rng, branch: usize, depth: usize) -> Expr {
        let ops = self.cfg.unary_ops.len() + self.cfg.binary_ops.len();
        if depth <= 1 || ops == 0 || rng.random_bool(0.3) {
            return self.random_leaf(rng, branch);
        }
        let use_unary = !self.cfg.unary_ops.is_empty() && (self.cfg.binary_ops.is_empty() || rng.random_bool(0.15));
        if use_unary {
            let op = self.cfg.unary_ops[rng.random_range(0..self.cfg.unary_ops.len())];
            Expr::unary(op, self.random_tree(rng, branch, depth - 1))
        } else {
            let op = self.cfg.binary_ops[rng.random_range(0..self.cfg.binary_ops.len())];
            let a = self.random_tree(rng, branch, depth - 1);
            let b = if op == BinaryOp::Pow && rng.random_bool(0.7) {
                Expr::Const(self.random_const(rng))
            } else {
                self.random_tree(rng, branch, depth - 1)
            };
            Expr::binary(op, a, b)
        }
    }

    fn random_candidate(&self, rng: &mut ChaCha8Rng) -> Expr {
        let branch = |b: usize, rng: &mut ChaCha8Rng| match &self.pins[b] {
            Some(p) => p.clone(),
            None => {
                let d = rng.random_range(1..=self.cfg.init_depth);
                simplify(&self.random_tree(rng, b, d))
            }
        };
        if self.pair {
            let a = branch(0, rng);
            Expr::pair(a, branch(1, rng))
        } else {
            branch(0, rng)
        }
    }

    fn mutate(&self, rng: &mut ChaCha8Rng, e: &Expr, branch: usize, kind: Variation) -> Expr {
        let indices = |pred: &dyn Fn(&Expr) -> bool| -> Vec<usize> {
            let mut out = Vec::new();
            let mut i = 0;
            e.visit(&mut |n| {
                if pred(n) {
                    out.push(i);
                }
                i += 1;
            });
            out
        };
        let pick = |rng: &mut ChaCha8Rng, v: &[usize]| v[rng.random_range(0..v.len())];
        match kind {
            Variation::OperatorSwap => {
                let ops = indices(&|n| matches!(n, Expr::Unary(..) | Expr::Binary(..)));
                if !ops.is_empty() {
                    let idx = pick(rng, &ops);
                    let replaced = match e.subtree(idx) {
                        Some(Expr::Unary(op, a)) => {
                            let alt: Vec<UnaryOp> = self.cfg.unary_ops.iter().copied().filter(|o| o != op).collect();
                            (!alt.is_empty()).then(|| Expr::unary(alt[rng.random_range(0..alt.len())], (**a).clone()))
                        }
                        Some(Expr::Binary(op, a, b)) => {
                            let alt: Vec<BinaryOp> = self.cfg.binary_ops.iter().copied().filter(|o| o != op).collect();
                            (!alt.is_empty())
                                .then(|| Expr::binary(alt[rng.random_range(0..alt.len())], (**a).clone(), (**b).clone()))
                        }
                        _ => None,
                    };
                    if let Some(r) = replaced {
                        return e.replace_subtree(idx, r);
                    }
                }
                self.mutate(rng, e, branch, Variation::SubtreeReplace)
            }
            Variation::ConstantJitter => {
                let consts = indices(&|n| matches!(n, Expr::Const(_)));
                if consts.is_empty() {
                    return self.mutate(rng, e, branch, Variation::SubtreeReplace);
                }
                let idx = pick(rng, &consts);
                let Some(Expr::Const(c)) = e.subtree(idx) else { unreachable!() };
                let c = *c;
                let v = if self.cfg.integer_constants {
                    let v = if rng.random_bool(0.5) { c + 1.0 } else { c - 1.0 };
                    if v == 0.0 { -c } else { v }
                } else if rng.random_bool(0.25) {
                    let r = c.round();
                    if r != 0.0 && r != c { r } else if c == 0.0 { 1.0 } else { c + c.signum() }
                } else {
                    let k: f64 = Normal::new(0.0, 0.5).expect("valid normal").sample(rng);
                    let v = c * k.exp();
                    let v = if v == 0.0 { self.random_const(rng) } else { v };
                    if rng.random_bool(0.05) { -v } else { v }
                };
                e.replace_subtree(idx, Expr::Const(v))
            }
            Variation::SubtreeReplace => {
                let idx = rng.random_range(0..e.node_count());
                let depth = rng.random_range(1..=3);
                e.replace_subtree(idx, self.random_tree(rng, branch, depth))
            }
            Variation::Hoist => {
                let inner = indices(&|n| matches!(n, Expr::Unary(..) | Expr::Binary(..)));
                if inner.is_empty() {
                    return self.mutate(rng, e, branch, Variation::SubtreeReplace);
                }
                let idx = pick(rng, &inner);
                let sub = e.subtree(idx).expect("index from walk");
                let j = rng.random_range(1..sub.node_count());
                e.replace_subtree(idx, sub.subtree(j).expect("index in range").clone())
            }
            Variation::VariableSwap => {
                let vars = indices(&|n| matches!(n, Expr::Var(_)));
                let pool = &self.vars[branch];
                if vars.is_empty() || pool.len() < 2 {
                    return self.mutate(rng, e, branch, Variation::SubtreeReplace);
                }
                let idx = pick(rng, &vars);
                let Some(Expr::Var(old)) = e.subtree(idx) else { unreachable!() };
                let alt: Vec<usize> = pool.iter().copied().filter(|v| v != old).collect();
                e.replace_subtree(idx, Expr::Var(alt[rng.random_range(0..alt.len())]))
            }
            Variation::Crossover => unreachable!("crossover handled by caller"),
        }
    }
}

fn branch_of(e: &Expr, b: usize) -> &Expr {
    match e {
        Expr::Pair(x, y) => {
            if b == 0 {
                x
            } else {
                y
            }
        }
        other => other,
    }
}

fn with_branch(e: &Expr, b: usize, new: Expr) -> Expr {
    match e {
        Expr::Pair(x, y) => {
            if b == 0 {
                Expr::pair(new, (**y).clone())
            } else {
                Expr::pair((**x).clone(), new)
            }
        }
        _ => new,
    }
}

#[derive(Debug, Clone)]
struct HofSlot {
    best: Individual,
    /// Lowest base term among penalty-free candidates.
    clean: Option<Individual>,
}

struct Island {
    rng: ChaCha8Rng,
    pop: Vec<Individual>,
    hof: BTreeMap<usize, HofSlot>,
    weights: PenaltyWeights,
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Base terms the auto weights are derived from: those of penalty-free
/// members, or of everyone when no member is penalty-free.
fn weight_bases<'a>(inds: impl Iterator<Item = &'a Individual>) -> Vec<f64> {
    let (clean, all): (Vec<f64>, Vec<f64>) = inds.fold((Vec::new(), Vec::new()), |(mut c, mut a), i| {
        if i.score.units.iter().all(|u| *u == 0.0) && i.score.base.is_finite() {
            c.push(i.score.base);
        }
        a.push(i.score.base);
        (c, a)
    });
    if clean.is_empty() { all } else { clean }
}

fn auto_weights(spec: &LossSpec, bases: &mut Vec<f64>, fallback: PenaltyWeights) -> PenaltyWeights {
    let LossSpec::Implicit(i) = spec else {
        return fallback;
    };
    let Some(factor) = i.auto_weight_factor else {
        return i.weights;
    };
    bases.retain(|b| b.is_finite());
    match median(bases) {
        Some(m) if m > 0.0 => {
            let w = factor * m;
            PenaltyWeights { sens: w, dim: w, rule: w }
        }
        _ => fallback,
    }
}

impl Island {
    fn record(&mut self, ind: &Individual) {
        if !ind.loss.is_finite() {
            return;
        }
        let clean = ind.score.units.iter().all(|u| *u == 0.0);
        match self.hof.get_mut(&ind.complexity) {
            None => {
                self.hof.insert(
                    ind.complexity,
                    HofSlot { best: ind.clone(), clean: clean.then(|| ind.clone()) },
                );
            }
            Some(slot) => {
                if ind.loss < slot.best.loss {
                    slot.best = ind.clone();
                }
                if clean && slot.clean.as_ref().is_none_or(|c| ind.score.base < c.score.base) {
                    slot.clean = Some(ind.clone());
                }
            }
        }
    }

    fn refresh_weights(&mut self, ctx: &Ctx) {
        let mut bases = weight_bases(self.pop.iter());
        self.weights = auto_weights(ctx.loss, &mut bases, self.weights);
        let w = self.weights;
        for ind in &mut self.pop {
            ind.loss = ind.score.total(&w);
        }
    }

    fn tournament(&mut self, ctx: &Ctx) -> usize {
        let n = self.pop.len();
        let p = ctx.cfg.parsimony;
        let mut best = self.rng.random_range(0..n);
        for _ in 1..ctx.cfg.tournament_size {
            let c = self.rng.random_range(0..n);
            let (fc, fb) = (self.pop[c].fitness(p), self.pop[best].fitness(p));
            if fc < fb || (fc == fb && self.pop[c].complexity < self.pop[best].complexity) {
                best = c;
            }
        }
        best
    }

    fn replace_worst(&mut self, ctx: &Ctx, child: Individual) {
        let n = self.pop.len();
        let p = ctx.cfg.parsimony;
        let mut worst = self.rng.random_range(0..n);
        for _ in 1..ctx.cfg.tournament_size {
            let c = self.rng.random_range(0..n);
            let (fc, fw) = (self.pop[c].fitness(p), self.pop[worst].fitness(p));
            if fc > fw || fw.is_nan() || (fc == fw && self.pop[c].complexity > self.pop[worst].complexity) {
                worst = c;
            }
        }
        self.pop[worst] = child;
    }

    fn event(&mut self, ctx: &Ctx) {
        let free = ctx.free_branches();
        if free.is_empty() {
            return;
        }
        let kind = ctx.cfg.mutation.pick(self.rng.random::<f64>());
        let p1 = self.tournament(ctx);
        let branch = free[self.rng.random_range(0..free.len())];
        let parent = self.pop[p1].expr.clone();
        let old = branch_of(&parent, branch);
        let new_branch = if kind == Variation::Crossover && free.len() == 2 && self.rng.random_bool(0.5) {
            // Whole-branch swap with an untournamented donor, so a good
            // branch held by a weak pair can meet a better partner.
            let p2 = self.rng.random_range(0..self.pop.len());
            branch_of(&self.pop[p2].expr, branch).clone()
        } else if kind == Variation::Crossover {
            let p2 = self.tournament(ctx);
            let donor = branch_of(&self.pop[p2].expr, branch).clone();
            let i = self.rng.random_range(0..old.node_count());
            let j = self.rng.random_range(0..donor.node_count());
            old.replace_subtree(i, donor.subtree(j).expect("index in range").clone())
        } else {
            ctx.mutate(&mut self.rng, old, branch, kind)
        };
        let child = with_branch(&parent, branch, simplify(&new_branch));
        if !ctx.within_limits(&child) {
            return;
        }
        let ind = ctx.evaluate(child, &self.weights);
        self.record(&ind);
        // An exact (loss, complexity) twin of a member adds nothing but
        // crowding, so it only goes to the hall of fame.
        if self.pop.iter().any(|p| p.complexity == ind.complexity && p.loss == ind.loss) {
            return;
        }
        self.replace_worst(ctx, ind);
    }

    fn optimize_some(&mut self, ctx: &Ctx) {
        let count = (self.pop.len() / 20).max(1);
        let spec = with_weights(ctx.loss, self.weights);
        let mut done = Vec::with_capacity(count);
        for _ in 0..count {
            let i = self.tournament(ctx);
            if done.contains(&i) || self.pop[i].expr.constants().is_empty() || !self.pop[i].loss.is_finite() {
                continue;
            }
            done.push(i);
            let e = optimize_constants(&self.pop[i].expr, &spec, ctx.data, 1);
            if e != self.pop[i].expr {
                let ind = ctx.evaluate(e, &self.weights);
                if ind.loss < self.pop[i].loss {
                    self.record(&ind);
                    self.pop[i] = ind;
                }
            }
        }
    }

    fn iterate(&mut self, ctx: &Ctx, iteration: usize) {
        self.refresh_weights(ctx);
        for _ in 0..self.pop.len() {
            self.event(ctx);
        }
        if !ctx.cfg.integer_constants && (iteration + 1) % ctx.cfg.optimize_every == 0 {
            self.optimize_some(ctx);
        }
    }

    fn best_loss(&self) -> f64 {
        self.pop.iter().map(|i| i.loss).fold(f64::INFINITY, f64::min)
    }
}

/// Copy of `spec` whose implicit penalty weights are fixed to `w`.
pub fn with_weights(spec: &LossSpec, w: PenaltyWeights) -> LossSpec {
    match spec {
        LossSpec::Implicit(i) => {
            let mut i = i.clone();
            i.weights = w;
            i.auto_weight_factor = None;
            LossSpec::Implicit(i)
        }
        other => other.clone(),
    }
}

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Final penalty weights and front of a search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub front: ParetoFront,
    pub weights: PenaltyWeights,
}

fn resolve_vars(data: &Dataset, loss: &LossSpec, cfg: &EngineConfig) -> Result<[Vec<usize>; 2], EngineError> {
    let default: Vec<usize> = if loss.uses_target() { (0..data.ncols()).collect() } else { data.input_indices() };
    let base = cfg.variables.clone().unwrap_or(default);
    let sets = match &cfg.branch_variables {
        Some([a, b]) => [a.clone(), b.clone()],
        None => [base.clone(), base],
    };
    for s in &sets {
        if s.iter().any(|&v| v >= data.ncols()) {
            return Err(EngineError::ConfigInvalid("variable index out of range".into()));
        }
        if !loss.uses_target() && data.target().is_some_and(|t| s.contains(&t)) {
            return Err(EngineError::ConfigInvalid("the target column cannot be a search variable".into()));
        }
    }
    Ok(sets)
}

fn run(
    data: &Dataset,
    loss: &LossSpec,
    cfg: &EngineConfig,
    pair: bool,
    inject: &[Expr],
    sink: Option<&dyn Fn(&Progress)>,
) -> Result<SearchOutcome, EngineError> {
    cfg.validate()?;
    let mut merged = run_once(data, loss, cfg, pair, inject, sink)?;
    if cfg.restarts == 1 {
        return Ok(merged);
    }
    // Later restarts are rescored under the first run's penalty weights so
    // that the merged front compares like with like.
    let spec = with_weights(loss, merged.weights);
    for r in 1..cfg.restarts {
        let sub = EngineConfig { seed: splitmix(cfg.seed ^ splitmix(r as u64)), ..cfg.clone() };
        let out = run_once(data, loss, &sub, pair, inject, sink)?;
        for e in out.front.entries() {
            let l = if matches!(loss, LossSpec::Implicit(_)) { losses::loss(&e.expr, data, &spec) } else { e.loss };
            merged.front.insert(e.expr.clone(), l, e.complexity);
        }
    }
    Ok(merged)
}

fn run_once(
    data: &Dataset,
    loss: &LossSpec,
    cfg: &EngineConfig,
    pair: bool,
    inject: &[Expr],
    sink: Option<&dyn Fn(&Progress)>,
) -> Result<SearchOutcome, EngineError> {
    if data.nrows() == 0 {
        return Err(EngineError::IncompatibleLoss("empty dataset".into()));
    }
    if !loss.uses_target() && data.target().is_none() {
        return Err(EngineError::IncompatibleLoss("loss needs a target column".into()));
    }
    let pins = loss.pins();
    let ctx = Ctx {
        data,
        loss,
        cfg,
        pair,
        vars: resolve_vars(data, loss, cfg)?,
        pins: [pins[0].cloned(), pins[1].cloned()],
    };
    let fallback = match loss {
        LossSpec::Implicit(i) => i.weights,
        _ => PenaltyWeights::default(),
    };

    let k = cfg.islands;
    let mut islands: Vec<Island> = (0..k)
        .map(|i| {
            let size = cfg.population_size / k + usize::from(i < cfg.population_size % k);
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed.wrapping_add(i as u64)));
            let exprs: Vec<Expr> = (0..size)
                .map(|j| match inject.get(j) {
                    Some(e) => e.clone(),
                    None => ctx.random_candidate(&mut rng),
                })
                .collect();
            let mut island = Island { rng, pop: Vec::with_capacity(size), hof: BTreeMap::new(), weights: fallback };
            let scored: Vec<Individual> = exprs.into_iter().map(|e| ctx.evaluate(e, &fallback)).collect();
            island.pop = scored;
            island.refresh_weights(&ctx);
            let pop = island.pop.clone();
            for ind in &pop {
                island.record(ind);
            }
            island
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| EngineError::ConfigInvalid(format!("thread pool: {e}")))?;

    for it in 0..cfg.iterations {
        pool.install(|| islands.par_iter_mut().for_each(|isl| isl.iterate(&ctx, it)));
        if k > 1 && (it + 1) % cfg.migration_interval == 0 {
            migrate(&mut islands, cfg.parsimony);
        }
        if let Some(sink) = sink {
            let front = assemble(&ctx, &islands, fallback, false).front;
            let best = islands.iter().map(Island::best_loss).fold(f64::INFINITY, f64::min);
            sink(&Progress { iteration: it + 1, best_loss: best, front_size: front.len() });
        }
    }
    Ok(pool.install(|| assemble(&ctx, &islands, fallback, true)))
}

fn migrate(islands: &mut [Island], parsimony: f64) {
    let k = islands.len();
    let emigrants: Vec<Vec<Individual>> = islands
        .iter()
        .map(|isl| {
            let m = (isl.pop.len() / 20).max(1);
            let mut order: Vec<usize> = (0..isl.pop.len()).collect();
            order.sort_by(|&a, &b| isl.pop[a].fitness(parsimony).total_cmp(&isl.pop[b].fitness(parsimony)).then(a.cmp(&b)));
            order.into_iter().take(m).map(|i| isl.pop[i].clone()).collect()
        })
        .collect();
    for (i, isl) in islands.iter_mut().enumerate() {
        let incoming = &emigrants[(i + k - 1) % k];
        let mut order: Vec<usize> = (0..isl.pop.len()).collect();
        order.sort_by(|&a, &b| isl.pop[b].fitness(parsimony).total_cmp(&isl.pop[a].fitness(parsimony)).then(a.cmp(&b)));
        for (slot, ind) in order.into_iter().zip(incoming) {
            let mut ind = ind.clone();
            ind.loss = ind.score.total(&isl.weights);
            isl.pop[slot] = ind;
        }
    }
}

fn assemble(ctx: &Ctx, islands: &[Island], fallback: PenaltyWeights, polish: bool) -> SearchOutcome {
    let mut bases = weight_bases(islands.iter().flat_map(|i| i.pop.iter()));
    let weights = auto_weights(ctx.loss, &mut bases, fallback);
    let mut front = ParetoFront::new();
    let offer = |ind: &Individual, front: &mut ParetoFront| {
        front.insert(ind.expr.clone(), ind.score.total(&weights), ind.complexity);
    };
    for isl in islands {
        for slot in isl.hof.values() {
            offer(&slot.best, &mut front);
            if let Some(c) = &slot.clean {
                offer(c, &mut front);
            }
        }
        for ind in &isl.pop {
            offer(ind, &mut front);
        }
    }
    if polish && !ctx.cfg.integer_constants {
        let spec = with_weights(ctx.loss, weights);
        let polished: Vec<Expr> = front
            .entries()
            .par_iter()
            .filter(|e| !e.expr.constants().is_empty())
            .map(|e| optimize_constants(&e.expr, &spec, ctx.data, ctx.cfg.const_restarts))
            .collect();
        for e in polished {
            let l = losses::loss(&e, ctx.data, &spec);
            let c = e.complexity();
            front.insert(e, l, c);
        }
    }
    SearchOutcome { front, weights }
}

/// Searches single-rooted expressions.
pub fn search(data: &Dataset, loss: &LossSpec, cfg: &EngineConfig) -> Result<ParetoFront, EngineError> {
    search_with(data, loss, cfg, &[], None).map(|o| o.front)
}

/// [`search`] with injected starting expressions and a progress sink.
pub fn search_with(
    data: &Dataset,
    loss: &LossSpec,
    cfg: &EngineConfig,
    inject: &[Expr],
    sink: Option<&dyn Fn(&Progress)>,
) -> Result<SearchOutcome, EngineError> {
    if loss.wants_pair() {
        return Err(EngineError::IncompatibleLoss(format!("{} loss needs pair_search", loss.mode())));
    }
    if inject.iter().any(Expr::is_pair) {
        return Err(EngineError::IncompatibleLoss("pair-rooted seed in a single-root search".into()));
    }
    run(data, loss, cfg, false, inject, sink)
}

/// Searches pair-rooted expressions; each variation edits one branch.
pub fn pair_search(data: &Dataset, loss: &LossSpec, cfg: &EngineConfig) -> Result<ParetoFront, EngineError> {
    pair_search_with(data, loss, cfg, &[], None).map(|o| o.front)
}

pub fn pair_search_with(
    data: &Dataset,
    loss: &LossSpec,
    cfg: &EngineConfig,
    inject: &[Expr],
    sink: Option<&dyn Fn(&Progress)>,
) -> Result<SearchOutcome, EngineError> {
    if !loss.wants_pair() {
        return Err(EngineError::IncompatibleLoss(format!("{} loss is single-rooted", loss.mode())));
    }
    if inject.iter().any(|e| !e.is_pair()) {
        return Err(EngineError::IncompatibleLoss("pair search seeds must be pair-rooted".into()));
    }
    run(data, loss, cfg, true, inject, sink)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn front(pts: &[(usize, f64)]) -> ParetoFront {
        let mut f = ParetoFront::new();
        for &(c, l) in pts {
            f.insert(Expr::Const(c as f64), l, c);
        }
        f
    }

    #[test]
    fn knee_selection() {
        let f = front(&[(1, 100.0), (3, 1.0), (9, 0.9)]);
        let (e, s) = select_candidate(&f).unwrap();
        assert_eq!(e.complexity, 3);
        assert!((s - 100f64.ln() / 2.0).abs() < 1e-12);
        let single = front(&[(5, 2.0)]);
        assert_eq!(select_candidate(&single).unwrap().0.complexity, 5);
        // equal scores: ln(100)/2 both times
        let tie = front(&[(1, 1e4), (3, 1e2), (5, 1.0)]);
        assert_eq!(select_candidate(&tie).unwrap().0.complexity, 3);
        assert!(select_candidate(&ParetoFront::new()).is_none());
    }

    #[test]
    fn front_rejects_dominated_entries() {
        let mut f = front(&[(3, 1.0), (5, 0.5)]);
        assert!(!f.insert(Expr::Var(0), 1.0, 4));
        assert!(!f.insert(Expr::Var(0), 0.5, 5));
        assert!(f.insert(Expr::Var(0), 0.4, 4));
        assert_eq!(f.len(), 2);
        assert!(f.is_valid());
        assert!(!f.insert(Expr::Var(0), f64::NAN, 1));
    }

    #[test]
    fn bfgs_on_quadratic() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2);
        let (x, fx) = bfgs_minimize(&f, &[0.0, 0.0], 100);
        assert!(fx < 1e-12, "{fx}");
        assert!((x[0] - 3.0).abs() < 1e-6 && (x[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(EngineConfig::default().validate().is_ok());
        let mut c = EngineConfig::default();
        c.mutation.crossover = 0.5;
        assert!(matches!(c.validate(), Err(EngineError::ConfigInvalid(_))));
        let c = EngineConfig { islands: 0, ..EngineConfig::default() };
        assert!(c.validate().is_err());
        let c = EngineConfig { max_complexity: 2, ..EngineConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn fits_scaling_constant() {
        let x: Vec<f64> = (1..=20).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let d = Dataset::from_xy(vec![x], Some(y)).unwrap();
        let e = optimize_constants(&parse("1.7*x0").unwrap(), &LossSpec::SquaredError, &d, 2);
        assert!((e.constants()[0] - 3.0).abs() < 1e-6, "{e}");
    }

    #[test]
    fn pair_loss_rejected_by_single_search() {
        let d = Dataset::from_xy(vec![vec![1.0, 2.0]], Some(vec![1.0, 2.0])).unwrap();
        let spec = LossSpec::Transformation(losses::TransformSpec::new(1, Expr::Const(1.0), false));
        assert!(matches!(search(&d, &spec, &EngineConfig::default()), Err(EngineError::IncompatibleLoss(_))));
        assert!(matches!(pair_search(&d, &LossSpec::SquaredError, &EngineConfig::default()), Err(EngineError::IncompatibleLoss(_))));
    }
}
