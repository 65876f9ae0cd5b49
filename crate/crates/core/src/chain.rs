//! Chain orchestration.
//!
//! A [`StagePlan`] lists the stages to run: invariance learning (π groups
//! and an optional implicit search), layered compression with hierarchical
//! searches, and a scaling transformation. Every discovered unit is recorded
//! as a [`ChainNode`] together with the column frame its expression indexes,
//! so a stored chain can be replayed on new data without refitting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::dims::{
    canonicalize_pi_basis, nondimensionalize, null_space, rationalize, DimMatrix, DimsError, PiGroup,
};
use crate::engine::{
    self, knee_scores, pair_search_with, search_with, select_candidate, splitmix, EngineConfig, EngineError,
    ParetoFront,
};
use crate::expr::{parse_with_names, power_product, report_form, BinaryOp, Expr, UnaryOp};
use crate::losses::{
    hierarchical_fit, implicit_score, transformation_fit, DegreePolicy, HierarchicalSpec, ImplicitSpec, LossSpec,
    TransformSpec,
};
use crate::polyfit::{fit_poly, mean_relative_error, r_squared, PolyModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("invalid stage plan: {0}")]
    PlanInvalid(String),
    #[error(transparent)]
    Dims(#[from] DimsError),
    #[error("variable `{0}` has no dimension vector")]
    MissingDims(String),
    #[error("layer {layer} failed: best R² {r2:.6} does not reach previous {previous:.6} within the margin")]
    LayerFailed { layer: usize, r2: f64, previous: f64 },
    #[error("input signature mismatch: {0}")]
    SignatureMismatch(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("cannot parse `{text}`: {message}")]
    Parse { text: String, message: String },
    #[error("unknown export format `{0}`")]
    UnknownFormat(String),
    #[error("malformed chain document: {0}")]
    Json(String),
    #[error("stage produced no usable candidate: {0}")]
    NoCandidate(String),
}

/// Optional per-stage changes to the base engine configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineOverrides {
    pub population_size: Option<usize>,
    pub iterations: Option<usize>,
    pub islands: Option<usize>,
    pub unary_ops: Option<Vec<UnaryOp>>,
    pub binary_ops: Option<Vec<BinaryOp>>,
    pub max_complexity: Option<usize>,
    pub parsimony: Option<f64>,
    pub const_range: Option<(f64, f64)>,
    pub integer_const_prob: Option<f64>,
    pub integer_constants: Option<bool>,
    pub tournament_size: Option<usize>,
    pub restarts: Option<usize>,
}

impl EngineOverrides {
    pub fn apply(&self, base: &EngineConfig) -> EngineConfig {
        let mut c = base.clone();
        if let Some(v) = self.population_size {
            c.population_size = v;
        }
        if let Some(v) = self.iterations {
            c.iterations = v;
        }
        if let Some(v) = self.islands {
            c.islands = v;
        }
        if let Some(v) = &self.unary_ops {
            c.unary_ops = v.clone();
        }
        if let Some(v) = &self.binary_ops {
            c.binary_ops = v.clone();
        }
        if let Some(v) = self.max_complexity {
            c.max_complexity = v;
        }
        if let Some(v) = self.parsimony {
            c.parsimony = v;
        }
        if let Some(v) = self.const_range {
            c.const_range = v;
        }
        if let Some(v) = self.integer_const_prob {
            c.integer_const_prob = v;
        }
        if let Some(v) = self.integer_constants {
            c.integer_constants = v;
        }
        if let Some(v) = self.tournament_size {
            c.tournament_size = v;
        }
        if let Some(v) = self.restarts {
            c.restarts = v;
        }
        c
    }
}

fn yes() -> bool {
    true
}
fn default_ceiling() -> f64 {
    1e-2
}
fn default_max_exp() -> u32 {
    3
}
fn default_r2_target() -> f64 {
    0.99
}
fn default_margin() -> f64 {
    1e-3
}
fn default_max_features() -> usize {
    8
}
fn default_activation() -> u32 {
    2
}
fn default_baseline() -> String {
    "1".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvarianceStage {
    #[serde(default)]
    pub run_implicit: bool,
    /// Continue on the π dataset; otherwise groups are only recorded.
    #[serde(default = "yes")]
    pub nondimensionalize: bool,
    /// Columns the implicit search may use; defaults to all columns.
    #[serde(default)]
    pub implicit_variables: Option<Vec<String>>,
    /// Implicit candidates whose base term exceeds this are not recorded.
    #[serde(default = "default_ceiling")]
    pub ceiling: f64,
    #[serde(default)]
    pub implicit_name: Option<String>,
    #[serde(default = "default_max_exp")]
    pub max_exponent: u32,
    #[serde(default)]
    pub engine: EngineOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    /// 1 or 2.
    pub intermediates: usize,
    #[serde(default)]
    pub names: Vec<String>,
    #[serde(default)]
    pub variables: Option<Vec<String>>,
    #[serde(default)]
    pub branch_variables: Option<[Vec<String>; 2]>,
    /// Overrides the stage's degree policy for this layer.
    #[serde(default)]
    pub degree: Option<DegreePolicy>,
    #[serde(default)]
    pub engine: EngineOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionStage {
    pub layers: Vec<LayerSpec>,
    #[serde(default = "yes")]
    pub augment: bool,
    #[serde(default)]
    pub log_space: bool,
    #[serde(default)]
    pub degree: DegreePolicy,
    /// A one-intermediate layer reaching this R² ends the stage.
    #[serde(default = "default_r2_target")]
    pub r2_target: f64,
    /// Allowed R² drop relative to the previous layer.
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_max_features")]
    pub max_features: usize,
    #[serde(default)]
    pub engine: EngineOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformStage {
    pub order: u32,
    #[serde(default)]
    pub log_space: bool,
    /// Baseline g(x) over the current frame.
    #[serde(default = "default_baseline")]
    pub baseline: String,
    #[serde(default)]
    pub variables: Option<Vec<String>>,
    /// SR1 held fixed during the search.
    #[serde(default)]
    pub pin_sr1: Option<String>,
    /// SR2 held fixed during the search.
    #[serde(default)]
    pub pin_sr2: Option<String>,
    /// Known (SR1, SR2) pairs evaluated and reported next to the discovered pair.
    #[serde(default)]
    pub references: Vec<ReferencePair>,
    /// The stage runs only when the baseline fit needs a higher degree than this.
    #[serde(default = "default_activation")]
    pub activation_degree: u32,
    #[serde(default = "default_r2_target")]
    pub r2_threshold: f64,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub engine: EngineOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferencePair {
    pub name: String,
    pub sr1: String,
    pub sr2: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stage {
    Invariance(InvarianceStage),
    Compression(CompressionStage),
    Transformation(TransformStage),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

impl StagePlan {
    pub fn validate(&self) -> Result<(), ChainError> {
        let bad = |m: String| Err(ChainError::PlanInvalid(m));
        for (i, s) in self.stages.iter().enumerate() {
            match s {
                Stage::Invariance(_) if i != 0 => return bad("the invariance stage must come first".into()),
                Stage::Compression(c) => {
                    if c.layers.is_empty() {
                        return bad("compression needs at least one layer".into());
                    }
                    if c.layers.iter().any(|l| !(1..=2).contains(&l.intermediates)) {
                        return bad("layers take 1 or 2 intermediates".into());
                    }
                    if c.layers.windows(2).any(|w| w[1].intermediates >= w[0].intermediates) {
                        return bad("layer schedule must be strictly decreasing".into());
                    }
                }
                Stage::Transformation(t) if !(1..=4).contains(&t.order) => {
                    return bad(format!("transformation order {} outside 1..=4", t.order));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedExpr {
    pub name: String,
    pub expr: String,
}

/// Everything a chain run depends on besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub seed: u64,
    #[serde(default)]
    pub engine: EngineConfig,
    pub plan: StagePlan,
    /// Fraction of rows held out for an overfitting check.
    #[serde(default)]
    pub holdout: Option<f64>,
    /// Named power products that rename matching π groups.
    #[serde(default)]
    pub reference_groups: Vec<NamedExpr>,
}

impl ChainConfig {
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Group,
    Invariant,
    Unit,
    Transformation,
    Reference,
    Marker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub expr_infix: String,
    pub loss: Option<f64>,
    pub complexity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainNode {
    pub name: String,
    pub role: NodeRole,
    pub layer: usize,
    pub expr_infix: String,
    #[serde(rename = "expr_tree")]
    pub expr: Expr,
    /// Column names that `Var(i)` in the expression refers to.
    pub frame: Vec<String>,
    pub loss_mode: String,
    pub loss: Option<f64>,
    pub complexity: usize,
    pub r2: Option<f64>,
    pub mre: Option<f64>,
    pub parents: Vec<String>,
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_form: Option<String>,
    /// Mean of the report form over the data (invariants).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
    /// Fitted polynomial coefficients in raw units, constant term first (order-1 transformations).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    #[serde(default)]
    pub alternatives: Vec<Alternative>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub kind: String,
    pub nodes: Vec<ChainNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFinal {
    pub inputs: Vec<String>,
    pub log_space: bool,
    pub model: PolyModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformFinal {
    pub frame: Vec<String>,
    pub sr1: Expr,
    pub sr2: Expr,
    pub baseline: Expr,
    pub sr1_infix: String,
    pub sr2_infix: String,
    pub baseline_infix: String,
    pub log_space: bool,
    pub order: u32,
    pub model: PolyModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalModel {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poly: Option<PolyFinal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformFinal>,
    pub r2: Option<f64>,
    pub mre: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_mre: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub name: String,
    pub group: PiGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub seed: u64,
    pub config_hash: String,
    pub dataset_sha256: String,
    #[serde(default)]
    pub case: Option<String>,
    pub provenance: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeChain {
    pub meta: ChainMeta,
    /// Raw columns the chain reads.
    pub inputs: Vec<String>,
    pub target: String,
    pub nondimensionalized: bool,
    pub groups: Vec<GroupRecord>,
    pub layers: Vec<Layer>,
    #[serde(rename = "final")]
    pub final_model: Option<FinalModel>,
    /// Target column name in the working frame.
    pub frame_target: String,
    pub engine_seeds: Vec<u64>,
    pub notes: Vec<String>,
    pub config: ChainConfig,
}

impl KnowledgeChain {
    pub fn nodes(&self) -> impl Iterator<Item = &ChainNode> {
        self.layers.iter().flat_map(|l| l.nodes.iter())
    }

    pub fn node(&self, name: &str) -> Option<&ChainNode> {
        self.nodes().find(|n| n.name == name)
    }
}

/// A finished chain plus the full fronts behind each selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub chain: KnowledgeChain,
    /// Error that ended the plan early; the chain holds everything before it.
    pub failure: Option<ChainError>,
    pub fronts: Vec<(String, ParetoFront, Vec<String>)>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn parse_in(text: &str, frame: &[String]) -> Result<Expr, ChainError> {
    parse_with_names(text, frame).map_err(|e| ChainError::Parse { text: text.to_string(), message: e.to_string() })
}

fn indices(frame: &Dataset, names: &[String]) -> Result<Vec<usize>, ChainError> {
    names
        .iter()
        .map(|n| frame.index_of(n).ok_or_else(|| ChainError::SignatureMismatch(format!("no column `{n}`"))))
        .collect()
}

fn stage_seed(seed: u64, stage: usize, layer: usize) -> u64 {
    splitmix(seed ^ ((stage as u64) << 32) ^ (layer as u64 + 1))
}

fn alternatives(front: &ParetoFront, selected: usize, frame: &[String]) -> Vec<Alternative> {
    let scores = knee_scores(front);
    let mut order: Vec<usize> = (0..front.len()).filter(|&i| i != selected).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(5)
        .map(|i| {
            let e = &front.entries()[i];
            Alternative { expr_infix: e.expr.format_with(frame), loss: finite(e.loss), complexity: e.complexity }
        })
        .collect()
}

fn select(front: &ParetoFront, what: &str) -> Result<(usize, f64), ChainError> {
    let (entry, score) = select_candidate(front).ok_or_else(|| ChainError::NoCandidate(what.to_string()))?;
    let idx = front.entries().iter().position(|e| std::ptr::eq(e, entry)).expect("entry from front");
    Ok((idx, score))
}

fn used_names(e: &Expr, frame: &[String]) -> Vec<String> {
    e.variables().into_iter().filter_map(|i| frame.get(i).cloned()).collect()
}

fn blank_node(name: String, role: NodeRole, layer: usize, expr: Expr, frame: &[String], mode: &str) -> ChainNode {
    ChainNode {
        name,
        role,
        layer,
        expr_infix: expr.format_with(frame),
        complexity: expr.complexity(),
        expr,
        frame: frame.to_vec(),
        loss_mode: mode.to_string(),
        loss: None,
        r2: None,
        mre: None,
        parents: Vec::new(),
        score: None,
        report_form: None,
        constant: None,
        coefficients: None,
        alternatives: Vec::new(),
        note: None,
    }
}

fn marker(name: &str, layer: usize, note: String) -> ChainNode {
    let mut n = blank_node(name.to_string(), NodeRole::Marker, layer, Expr::Const(0.0), &[], "none");
    n.note = Some(note);
    n
}

/// π group from a power product over the frame's variables.
pub fn pi_group_from_expr(e: &Expr, names: &[String]) -> Option<PiGroup> {
    let p = power_product(e)?;
    let mut exps = vec![crate::dims::rational_from_int(0); names.len()];
    for (f, x) in p.factors.values() {
        let Expr::Var(i) = f else {
            return None;
        };
        exps[*i] = rationalize(*x, 12, 1e-9)?;
    }
    Some(PiGroup::new(names.to_vec(), exps))
}

/// Front entries of an implicit search that carry no penalty.
pub fn clean_front(front: &ParetoFront, data: &Dataset, spec: &ImplicitSpec) -> ParetoFront {
    let mut out = ParetoFront::new();
    for e in front.entries() {
        if implicit_score(&e.expr, data, spec).units.iter().all(|u| *u == 0.0) {
            out.insert(e.expr.clone(), e.loss, e.complexity);
        }
    }
    out
}

/// Result of the invariance stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Invariance {
    pub frame: Dataset,
    pub groups: Vec<GroupRecord>,
    pub nodes: Vec<ChainNode>,
    pub notes: Vec<String>,
    pub front: Option<(ParetoFront, Vec<String>)>,
}

/// Canonical π groups for the dataset, renamed after matching references.
pub fn pi_groups(
    data: &Dataset,
    references: &[NamedExpr],
    max_exponent: u32,
) -> Result<(Vec<GroupRecord>, Vec<String>), ChainError> {
    let target = data.target();
    let mut vars = Vec::new();
    for i in 0..data.ncols() {
        let d = data.dims(i).ok_or_else(|| ChainError::MissingDims(data.name(i).to_string()))?;
        if Some(i) == target && d.is_dimensionless() {
            continue;
        }
        vars.push((data.name(i).to_string(), d.clone()));
    }
    let names: Vec<String> = vars.iter().map(|(n, _)| n.clone()).collect();
    let matrix = DimMatrix::new(data.base().clone(), vars)?;
    let basis = null_space(&matrix);
    let target_name = target.map(|t| data.name(t).to_string()).filter(|t| names.contains(t));
    let mut notes = Vec::new();
    let groups = match canonicalize_pi_basis(&basis, target_name.as_deref(), max_exponent) {
        Ok(g) => g,
        Err(DimsError::CanonicalizationFailed { fallback, .. }) => {
            notes.push(format!("no π basis with exponents within ±{max_exponent}; echelon basis used"));
            fallback
        }
        Err(e) => return Err(e.into()),
    };
    let refs: Vec<(String, Expr)> = references
        .iter()
        .filter_map(|r| parse_with_names(&r.expr, &names).ok().map(|e| (r.name.clone(), e)))
        .collect();
    let mut out = Vec::new();
    let mut k = 0;
    for g in groups {
        let as_expr = parse_with_names(&g.to_infix(), &names).ok();
        let matched = as_expr.as_ref().and_then(|ge| {
            refs.iter().find(|(_, re)| crate::expr::monomial_equivalent(ge, re)).and_then(|(n, re)| {
                pi_group_from_expr(re, &names).map(|pg| (n.clone(), pg))
            })
        });
        let has_target = target_name.as_ref().is_some_and(|t| g.exponent_of(t).is_some_and(|e| *e != crate::dims::rational_from_int(0)));
        let record = match matched {
            Some((name, pg)) => GroupRecord { name, group: pg },
            None if has_target => GroupRecord { name: format!("{}_pi", target_name.as_deref().unwrap_or("y")), group: g },
            None => {
                k += 1;
                GroupRecord { name: format!("pi{k}"), group: g }
            }
        };
        out.push(record);
    }
    Ok((out, notes))
}

/// π analysis, nondimensionalization, and the optional implicit search.
pub fn run_invariance(
    data: &Dataset,
    stage: &InvarianceStage,
    config: &ChainConfig,
    seed: u64,
) -> Result<Invariance, ChainError> {
    let (groups, mut notes) = pi_groups(data, &config.reference_groups, stage.max_exponent)?;
    let raw_names: Vec<String> = data.names().to_vec();
    let mut nodes = Vec::new();
    for g in &groups {
        let e = parse_in(&g.group.to_infix(), &raw_names)?;
        let mut n = blank_node(g.name.clone(), NodeRole::Group, 0, e, &raw_names, "dims");
        n.parents = used_names(&n.expr, &raw_names);
        nodes.push(n);
    }
    let frame = if stage.nondimensionalize {
        let pg: Vec<PiGroup> = groups.iter().map(|g| g.group.clone()).collect();
        let names: Vec<String> = groups.iter().map(|g| g.name.clone()).collect();
        nondimensionalize(data, &pg, &names)?
    } else {
        data.clone()
    };

    let mut front_out = None;
    if stage.run_implicit {
        let vars = match &stage.implicit_variables {
            Some(v) => indices(data, v)?,
            None => (0..data.ncols()).collect(),
        };
        let mut sub = data.select_columns(&vars);
        sub.set_target(None);
        let names: Vec<String> = sub.names().to_vec();
        let spec = ImplicitSpec { var_dims: sub.all_dims(), seed, ..ImplicitSpec::default() };
        let loss = LossSpec::Implicit(spec.clone());
        let cfg = EngineConfig { seed, ..stage.engine.apply(&config.engine) };
        let outcome = search_with(&sub, &loss, &cfg, &[], None)?;
        let clean = clean_front(&outcome.front, &sub, &spec);
        let front = if clean.is_empty() { &outcome.front } else { &clean };
        let (idx, score) = select(front, "implicit search")?;
        let entry = &front.entries()[idx];
        let base = implicit_score(&entry.expr, &sub, &spec).base;
        if base > stage.ceiling || !base.is_finite() {
            nodes.push(marker(
                "no_implicit_relation",
                0,
                format!("best invariant `{}` has Var[ln|F|] = {base:.3e} above the ceiling {:.3e}", entry.expr.format_with(&names), stage.ceiling),
            ));
        } else {
            let name = stage.implicit_name.clone().unwrap_or_else(|| "invariant".to_string());
            let mut n = blank_node(name, NodeRole::Invariant, 0, entry.expr.clone(), &names, "implicit");
            n.loss = finite(entry.loss);
            n.score = finite(score);
            n.parents = used_names(&entry.expr, &names);
            n.alternatives = alternatives(front, idx, &names);
            n.note = Some(format!("Var[ln|F|] = {base:.6e}"));
            if let Some(rf) = report_form(&entry.expr) {
                n.report_form = Some(rf.format_with(&names));
                let v = rf.evaluate(sub.columns());
                if v.is_clean() {
                    n.constant = Some(v.values.iter().sum::<f64>() / v.values.len() as f64);
                }
            }
            nodes.push(n);
        }
        front_out = Some((outcome.front, names));
    }
    if !stage.nondimensionalize {
        notes.push("π groups recorded; later stages use the raw variables".to_string());
    }
    Ok(Invariance { frame, groups, nodes, notes, front: front_out })
}

/// Result of a compression stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Compression {
    pub layers: Vec<Layer>,
    pub frame: Dataset,
    pub final_model: Option<FinalModel>,
    pub best_r2: Option<f64>,
    pub failure: Option<ChainError>,
    pub fronts: Vec<(String, ParetoFront, Vec<String>)>,
    pub seeds: Vec<u64>,
}

fn single_feature_r2(frame: &Dataset, col: usize, log_space: bool) -> f64 {
    let Some(y) = frame.target_values() else {
        return f64::NEG_INFINITY;
    };
    let x = frame.column(col);
    if log_space && (x.iter().any(|v| *v <= 0.0) || y.iter().any(|v| *v <= 0.0)) {
        return f64::NEG_INFINITY;
    }
    let tf = |v: &f64| if log_space { v.ln() } else { *v };
    let xs: Vec<f64> = x.iter().map(tf).collect();
    let ys: Vec<f64> = y.iter().map(tf).collect();
    fit_poly(&[&xs], &ys, 1).map_or(f64::NEG_INFINITY, |m| m.r2)
}

/// Layered hierarchical searches; each selected intermediate becomes a column.
pub fn run_compression(
    data: &Dataset,
    stage: &CompressionStage,
    config: &ChainConfig,
    stage_index: usize,
    layer_offset: usize,
    previous_r2: Option<f64>,
) -> Result<Compression, ChainError> {
    let mut frame = data.clone();
    let target = frame.target().ok_or_else(|| ChainError::SignatureMismatch("compression needs a target".into()))?;
    let originals: Vec<String> = frame.input_indices().iter().map(|&i| frame.name(i).to_string()).collect();
    let mut out = Compression {
        layers: Vec::new(),
        frame: frame.clone(),
        final_model: None,
        best_r2: previous_r2,
        failure: None,
        fronts: Vec::new(),
        seeds: Vec::new(),
    };
    let mut units: Vec<String> = Vec::new();
    for (li, layer) in stage.layers.iter().enumerate() {
        let layer_no = layer_offset + li;
        let mut vars: Vec<usize> = match &layer.variables {
            Some(v) => indices(&frame, v)?,
            None => (0..frame.ncols()).filter(|&i| i != target).collect(),
        };
        if vars.len() > stage.max_features {
            let mut drop: Vec<(f64, usize)> = vars
                .iter()
                .filter(|&&i| originals.iter().any(|n| n == frame.name(i)))
                .map(|&i| (single_feature_r2(&frame, i, stage.log_space), i))
                .collect();
            drop.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let excess = vars.len() - stage.max_features;
            let removed: Vec<usize> = drop.into_iter().take(excess).map(|(_, i)| i).collect();
            vars.retain(|i| !removed.contains(i));
        }
        let seed = stage_seed(config.seed, stage_index, li);
        out.seeds.push(seed);
        let mut cfg = layer.engine.apply(&stage.engine.apply(&config.engine));
        cfg.seed = seed;
        cfg.variables = Some(vars);
        if let Some([a, b]) = &layer.branch_variables {
            cfg.branch_variables = Some([indices(&frame, a)?, indices(&frame, b)?]);
        }
        let spec = HierarchicalSpec {
            intermediate_count: layer.intermediates,
            degree: layer.degree.unwrap_or(stage.degree),
            log_space: stage.log_space,
            context: Vec::new(),
        };
        let loss = LossSpec::Hierarchical(spec.clone());
        let outcome = if layer.intermediates == 2 {
            pair_search_with(&frame, &loss, &cfg, &[], None)?
        } else {
            search_with(&frame, &loss, &cfg, &[], None)?
        };
        let names: Vec<String> = frame.names().to_vec();
        let (idx, score) = select(&outcome.front, "compression layer")?;
        let entry = outcome.front.entries()[idx].clone();
        let fit = hierarchical_fit(&entry.expr, &frame, &spec)
            .ok_or_else(|| ChainError::NoCandidate(format!("layer {layer_no} fit failed")))?;
        let (r2, mre) = fit.stats();
        out.fronts.push((format!("layer{layer_no}"), outcome.front.clone(), names.clone()));
        if let Some(prev) = out.best_r2 {
            if !(r2 >= prev - stage.margin) {
                out.failure = Some(ChainError::LayerFailed { layer: layer_no, r2, previous: prev });
                break;
            }
        }
        let alts = alternatives(&outcome.front, idx, &names);
        let mut nodes = Vec::new();
        let mut new_cols = Vec::new();
        for (b, branch) in entry.expr.branches().into_iter().enumerate() {
            let mut name = layer.names.get(b).cloned().unwrap_or_else(|| format!("u_L{layer_no}_{}", b + 1));
            if frame.index_of(&name).is_some() || new_cols.iter().any(|(n, _)| n == &name) {
                name = format!("{name}_L{layer_no}");
            }
            let mut n = blank_node(name.clone(), NodeRole::Unit, layer_no, branch.clone(), &names, "hierarchical");
            n.loss = finite(entry.loss);
            n.r2 = finite(r2);
            n.mre = finite(mre);
            n.score = finite(score);
            n.parents = used_names(branch, &names);
            n.alternatives = alts.clone();
            let values = branch.evaluate(frame.columns()).values;
            new_cols.push((name, values));
            nodes.push(n);
        }
        let unit_names: Vec<String> = new_cols.iter().map(|(n, _)| n.clone()).collect();
        if stage.augment {
            for (n, v) in new_cols {
                frame.push_column(n, None, v).map_err(|e| ChainError::PlanInvalid(e.to_string()))?;
            }
        } else {
            let y = frame.column(target).to_vec();
            let tname = frame.name(target).to_string();
            let mut cols: Vec<(String, Option<crate::dims::DimVector>, Vec<f64>)> =
                new_cols.into_iter().map(|(n, v)| (n, None, v)).collect();
            cols.push((tname, None, y));
            let t = cols.len() - 1;
            frame = Dataset::from_columns(frame.base().clone(), cols, Some(t))
                .map_err(|e| ChainError::PlanInvalid(e.to_string()))?
                .with_provenance(frame.provenance().clone());
        }
        units = unit_names.clone();
        out.layers.push(Layer { kind: "compression".into(), nodes });
        out.best_r2 = Some(r2);
        out.final_model = Some(FinalModel {
            kind: "poly".into(),
            poly: Some(PolyFinal { inputs: unit_names, log_space: stage.log_space, model: fit.model.clone() }),
            transform: None,
            r2: finite(r2),
            mre: finite(mre),
            holdout_mre: None,
        });
        if layer.intermediates == 1 && r2 >= stage.r2_target {
            break;
        }
    }
    let _ = units;
    out.frame = frame;
    Ok(out)
}

/// Result of a transformation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformation {
    pub layer: Layer,
    pub final_model: Option<FinalModel>,
    pub front: Option<(ParetoFront, Vec<String>)>,
    pub seed: u64,
}

fn transform_final(
    fit: &crate::losses::TransformFit,
    sr1: &Expr,
    sr2: &Expr,
    baseline: &Expr,
    frame: &[String],
    stage: &TransformStage,
) -> FinalModel {
    let rec = fit.reconstructed();
    FinalModel {
        kind: "transform".into(),
        poly: None,
        transform: Some(TransformFinal {
            frame: frame.to_vec(),
            sr1: sr1.clone(),
            sr2: sr2.clone(),
            baseline: baseline.clone(),
            sr1_infix: sr1.format_with(frame),
            sr2_infix: sr2.format_with(frame),
            baseline_infix: baseline.format_with(frame),
            log_space: stage.log_space,
            order: stage.order,
            model: fit.model.clone(),
        }),
        r2: r_squared(&fit.y, &rec).ok().and_then(finite),
        mre: finite(fit.mre()),
        holdout_mre: None,
    }
}

fn transform_node(
    name: String,
    role: NodeRole,
    layer: usize,
    pair: Expr,
    frame: &[String],
    fit: &crate::losses::TransformFit,
) -> ChainNode {
    let mut n = blank_node(name, role, layer, pair.clone(), frame, "transformation");
    n.loss = finite(fit.normalized_rss());
    n.mre = finite(fit.mre());
    n.r2 = r_squared(&fit.y, &fit.reconstructed()).ok().and_then(finite);
    n.parents = used_names(&pair, frame);
    n.coefficients = fit.model.linear_coefficients().map(|(c, s)| std::iter::once(c).chain(s).collect());
    n
}

/// Pre-transformation fit of y on the baseline alone: (degree, MRE).
fn baseline_fit(frame: &Dataset, g: &Expr, stage: &TransformStage) -> (u32, f64) {
    let y = frame.target_values().unwrap_or(&[]);
    let gv = g.evaluate(frame.columns()).values;
    let tf = |v: f64| if stage.log_space { v.ln() } else { v };
    let xs: Vec<f64> = gv.iter().map(|v| tf(*v)).collect();
    let ys: Vec<f64> = y.iter().map(|v| tf(*v)).collect();
    let back = |v: f64| if stage.log_space { v.exp() } else { v };
    let policy = DegreePolicy::Sweep { max: crate::polyfit::MAX_DEGREE, r2_threshold: stage.r2_threshold };
    if xs.iter().chain(&ys).all(|v| v.is_finite()) {
        if let Ok(m) = policy.fit(&[xs.clone()], &ys) {
            let pred: Vec<f64> = m.predict(&[&xs]).into_iter().map(back).collect();
            let degree = if m.r2 >= stage.r2_threshold { m.degree } else { crate::polyfit::MAX_DEGREE + 1 };
            return (degree, mean_relative_error(y, &pred).unwrap_or(f64::INFINITY));
        }
    }
    let mean = ys.iter().sum::<f64>() / ys.len().max(1) as f64;
    let pred = vec![back(mean); y.len()];
    (crate::polyfit::MAX_DEGREE + 1, mean_relative_error(y, &pred).unwrap_or(f64::INFINITY))
}

/// Pair search for `y*SR1 = F_m(g*SR2)`, accepted only when it does not
/// raise the mean relative error of the baseline-only fit.
pub fn run_transformation(
    frame: &Dataset,
    stage: &TransformStage,
    config: &ChainConfig,
    stage_index: usize,
    layer_no: usize,
) -> Result<Transformation, ChainError> {
    let names: Vec<String> = frame.names().to_vec();
    let seed = stage_seed(config.seed, stage_index, 0);
    let baseline = parse_in(&stage.baseline, &names)?;
    let (degree, pre_mre) = baseline_fit(frame, &baseline, stage);
    let name = stage.name.clone().unwrap_or_else(|| format!("T_L{layer_no}"));
    let mut layer = Layer { kind: "transformation".into(), nodes: Vec::new() };
    let pins = [
        stage.pin_sr1.as_deref().map(|t| parse_in(t, &names)).transpose()?,
        stage.pin_sr2.as_deref().map(|t| parse_in(t, &names)).transpose()?,
    ];
    let mut spec = TransformSpec::new(stage.order, baseline.clone(), stage.log_space);

    for r in &stage.references {
        let pair = Expr::pair(parse_in(&r.sr1, &names)?, parse_in(&r.sr2, &names)?);
        if let Some(fit) = transformation_fit(&pair, frame, &spec) {
            let mut n = transform_node(r.name.clone(), NodeRole::Reference, layer_no, pair, &names, &fit);
            n.note = Some("reference scaling refitted on this data".into());
            layer.nodes.push(n);
        }
    }
    if degree <= stage.activation_degree {
        layer.nodes.push(marker(
            &format!("{name}_skipped"),
            layer_no,
            format!("baseline fit needs degree {degree} <= activation degree {}", stage.activation_degree),
        ));
        return Ok(Transformation { layer, final_model: None, front: None, seed });
    }

    spec.pins = pins;
    let loss = LossSpec::Transformation(spec.clone());
    let mut cfg = stage.engine.apply(&config.engine);
    cfg.seed = seed;
    let target = frame.target();
    cfg.variables = Some(match &stage.variables {
        Some(v) => indices(frame, v)?,
        None => (0..frame.ncols()).filter(|&i| Some(i) != target).collect(),
    });
    let outcome = pair_search_with(frame, &loss, &cfg, &[], None)?;
    let (idx, score) = select(&outcome.front, "transformation")?;
    let entry = &outcome.front.entries()[idx];
    let Expr::Pair(a, b) = &entry.expr else {
        return Err(ChainError::NoCandidate("transformation returned a non-pair".into()));
    };
    let sr1 = spec.pins[0].clone().unwrap_or_else(|| (**a).clone());
    let sr2 = spec.pins[1].clone().unwrap_or_else(|| (**b).clone());
    let pair = Expr::pair(sr1.clone(), sr2.clone());
    let front = Some((outcome.front.clone(), names.clone()));
    let Some(fit) = transformation_fit(&pair, frame, &spec) else {
        layer.nodes.push(marker(&format!("{name}_skipped"), layer_no, "selected pair cannot be refitted".into()));
        return Ok(Transformation { layer, final_model: None, front, seed });
    };
    let mre = fit.mre();
    if !(mre <= pre_mre) {
        layer.nodes.push(marker(
            &format!("{name}_skipped"),
            layer_no,
            format!("transformed MRE {mre:.6e} exceeds baseline MRE {pre_mre:.6e}"),
        ));
        return Ok(Transformation { layer, final_model: None, front, seed });
    }
    let mut n = transform_node(name, NodeRole::Transformation, layer_no, pair, &names, &fit);
    n.score = finite(score);
    n.alternatives = alternatives(&outcome.front, idx, &names);
    n.note = Some(format!("baseline-only fit: degree {degree}, MRE {pre_mre:.6e}"));
    layer.nodes.push(n);
    let final_model = Some(transform_final(&fit, &sr1, &sr2, &baseline, &names, stage));
    Ok(Transformation { layer, final_model, front, seed })
}

fn split_rows(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0x686f_6c64)));
    let k = ((n as f64) * fraction).round() as usize;
    let mut hold = idx[..k].to_vec();
    let mut train = idx[k..].to_vec();
    hold.sort_unstable();
    train.sort_unstable();
    (train, hold)
}

/// Runs the whole plan. Stage errors after the first stage end the plan
/// early and are returned next to the partial chain.
pub fn run_chain(data: &Dataset, config: &ChainConfig, case: Option<&str>) -> Result<ChainRun, ChainError> {
    config.plan.validate()?;
    config.engine.validate()?;
    let target = data.target().ok_or_else(|| ChainError::SignatureMismatch("dataset has no target".into()))?;
    let (train, holdout) = match config.holdout {
        Some(f) if f > 0.0 && f < 1.0 => {
            let (t, h) = split_rows(data.nrows(), f, config.seed);
            (data.select_rows(&t), Some(data.select_rows(&h)))
        }
        _ => (data.clone(), None),
    };
    // Worker threads never change results, so the snapshot leaves them out.
    let mut snapshot = config.clone();
    snapshot.engine.threads = 0;

    let mut chain = KnowledgeChain {
        meta: ChainMeta {
            seed: config.seed,
            config_hash: snapshot.hash(),
            dataset_sha256: data.fingerprint(),
            case: case.map(str::to_string),
            provenance: data.provenance().label(),
            status: "complete".into(),
        },
        inputs: data.names().to_vec(),
        target: data.name(target).to_string(),
        nondimensionalized: false,
        groups: Vec::new(),
        layers: Vec::new(),
        final_model: None,
        frame_target: data.name(target).to_string(),
        engine_seeds: Vec::new(),
        notes: Vec::new(),
        config: snapshot,
    };
    let mut fronts = Vec::new();
    let mut frame = train.clone();
    let mut best_r2 = None;
    let mut failure = None;

    for (si, stage) in config.plan.stages.iter().enumerate() {
        let layer_no = chain.layers.len();
        let result: Result<(), ChainError> = (|| {
            match stage {
                Stage::Invariance(s) => {
                    let seed = stage_seed(config.seed, si, 0);
                    let inv = run_invariance(&frame, s, config, seed)?;
                    if s.run_implicit {
                        chain.engine_seeds.push(seed);
                    }
                    chain.groups = inv.groups;
                    chain.nondimensionalized = s.nondimensionalize;
                    chain.notes.extend(inv.notes);
                    chain.layers.push(Layer { kind: "invariance".into(), nodes: inv.nodes });
                    if let Some((f, names)) = inv.front {
                        fronts.push(("implicit".to_string(), f, names));
                    }
                    frame = inv.frame;
                }
                Stage::Compression(s) => {
                    let c = run_compression(&frame, s, config, si, layer_no, best_r2)?;
                    chain.engine_seeds.extend(&c.seeds);
                    chain.layers.extend(c.layers);
                    fronts.extend(c.fronts);
                    if c.final_model.is_some() {
                        chain.final_model = c.final_model;
                    }
                    best_r2 = c.best_r2;
                    frame = c.frame;
                    if let Some(e) = c.failure {
                        return Err(e);
                    }
                }
                Stage::Transformation(s) => {
                    let t = run_transformation(&frame, s, config, si, layer_no)?;
                    chain.engine_seeds.push(t.seed);
                    chain.layers.push(t.layer);
                    if let Some((f, names)) = t.front {
                        fronts.push(("transformation".to_string(), f, names));
                    }
                    if t.final_model.is_some() {
                        chain.final_model = t.final_model;
                    }
                }
            }
            Ok(())
        })();
        if let Err(e) = result {
            if chain.layers.is_empty() && !matches!(e, ChainError::LayerFailed { .. }) {
                return Err(e);
            }
            chain.meta.status = "partial".into();
            chain.notes.push(format!("stopped: {e}"));
            failure = Some(e);
            break;
        }
    }
    if let Some(t) = frame.target() {
        chain.frame_target = frame.name(t).to_string();
    }
    if let (Some(h), Some(_)) = (&holdout, &chain.final_model) {
        let ev = evaluate_chain(&chain, h)?;
        if let Some(f) = chain.final_model.as_mut() {
            f.holdout_mre = finite(ev.mre);
        }
    }
    Ok(ChainRun { chain, failure, fronts })
}

/// Forward evaluation of a stored chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainEvaluation {
    pub r2: f64,
    pub mre: f64,
    pub predictions: Vec<f64>,
    /// Target in the units of the final model (the π target after nondimensionalization).
    pub target: Vec<f64>,
}

fn frame_columns(node_frame: &[String], cols: &BTreeMap<String, Vec<f64>>) -> Result<Vec<Vec<f64>>, ChainError> {
    node_frame
        .iter()
        .map(|n| cols.get(n).cloned().ok_or_else(|| ChainError::SignatureMismatch(format!("column `{n}` unavailable"))))
        .collect()
}

/// Replays the chain on `data` without refitting anything.
pub fn evaluate_chain(chain: &KnowledgeChain, data: &Dataset) -> Result<ChainEvaluation, ChainError> {
    let Some(fm) = &chain.final_model else {
        return Err(ChainError::SignatureMismatch("chain has no final model".into()));
    };
    let missing: Vec<&String> = chain.inputs.iter().filter(|n| data.index_of(n).is_none()).collect();
    if !missing.is_empty() {
        return Err(ChainError::SignatureMismatch(format!("missing columns {missing:?}")));
    }
    let mut d = data.select_columns(&indices(data, &chain.inputs)?);
    d.set_target(d.index_of(&chain.target));
    if d.target().is_none() {
        return Err(ChainError::SignatureMismatch(format!("target `{}` missing", chain.target)));
    }
    let frame = if chain.nondimensionalized {
        let groups: Vec<PiGroup> = chain.groups.iter().map(|g| g.group.clone()).collect();
        let names: Vec<String> = chain.groups.iter().map(|g| g.name.clone()).collect();
        nondimensionalize(&d, &groups, &names)?
    } else {
        d
    };
    let mut cols: BTreeMap<String, Vec<f64>> =
        frame.names().iter().cloned().zip(frame.columns().iter().cloned()).collect();
    for node in chain.nodes().filter(|n| n.role == NodeRole::Unit) {
        let c = frame_columns(&node.frame, &cols)?;
        cols.insert(node.name.clone(), node.expr.evaluate(&c).values);
    }
    let y = cols
        .get(&chain.frame_target)
        .cloned()
        .ok_or_else(|| ChainError::SignatureMismatch(format!("target `{}` unavailable", chain.frame_target)))?;
    let predictions: Vec<f64> = match (&fm.poly, &fm.transform) {
        (Some(p), _) => {
            let x: Vec<Vec<f64>> = frame_columns(&p.inputs, &cols)?
                .into_iter()
                .map(|c| if p.log_space { c.into_iter().map(f64::ln).collect() } else { c })
                .collect();
            let out = p.model.predict(&x);
            if p.log_space { out.into_iter().map(f64::exp).collect() } else { out }
        }
        (None, Some(t)) => {
            let c = frame_columns(&t.frame, &cols)?;
            let s1 = t.sr1.evaluate(&c).values;
            let s2 = t.sr2.evaluate(&c).values;
            let g = t.baseline.evaluate(&c).values;
            let rhs: Vec<f64> = g.iter().zip(&s2).map(|(a, b)| if t.log_space { (a * b).ln() } else { a * b }).collect();
            let f = t.model.predict(&[&rhs]);
            f.iter().zip(&s1).map(|(v, s)| if t.log_space { v.exp() / s } else { v / s }).collect()
        }
        (None, None) => return Err(ChainError::SignatureMismatch("final model is empty".into())),
    };
    let r2 = r_squared(&y, &predictions).unwrap_or(f64::NAN);
    let mre = mean_relative_error(&y, &predictions).unwrap_or(f64::NAN);
    Ok(ChainEvaluation { r2, mre, predictions, target: y })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.6e}"))
}

/// Human-readable report.
pub fn render_text(chain: &KnowledgeChain) -> String {
    let mut s = String::new();
    let m = &chain.meta;
    let _ = writeln!(s, "knowledge chain{}", m.case.as_deref().map(|c| format!(" for {c}")).unwrap_or_default());
    let _ = writeln!(s, "  seed {}  status {}", m.seed, m.status);
    let _ = writeln!(s, "  dataset sha256 {}", m.dataset_sha256);
    let _ = writeln!(s, "  provenance {}", m.provenance);
    let _ = writeln!(s, "  config hash {}", m.config_hash);
    let _ = writeln!(s, "  target {} (frame target {})", chain.target, chain.frame_target);
    if !chain.groups.is_empty() {
        let _ = writeln!(s, "\nπ groups{}:", if chain.nondimensionalized { "" } else { " (recorded only)" });
        for g in &chain.groups {
            let _ = writeln!(s, "  {} = {}", g.name, g.group.to_infix());
        }
    }
    for (li, layer) in chain.layers.iter().enumerate() {
        let _ = writeln!(s, "\nlayer {li} ({})", layer.kind);
        for n in layer.nodes.iter().filter(|n| n.role != NodeRole::Group) {
            let role = serde_json::to_string(&n.role).unwrap_or_default().trim_matches('"').to_string();
            let _ = writeln!(s, "  {} [{role}] {}", n.name, n.expr_infix);
            if n.role == NodeRole::Marker {
                if let Some(note) = &n.note {
                    let _ = writeln!(s, "    {note}");
                }
                continue;
            }
            let _ = writeln!(
                s,
                "    loss {} ({})  complexity {}  R2 {}  MRE {}  score {}",
                fmt_opt(n.loss),
                n.loss_mode,
                n.complexity,
                fmt_opt(n.r2),
                fmt_opt(n.mre),
                fmt_opt(n.score)
            );
            if let Some(rf) = &n.report_form {
                let _ = writeln!(s, "    report form {rf}  mean value {}", fmt_opt(n.constant));
            }
            if let Some(c) = &n.coefficients {
                let parts: Vec<String> = c.iter().map(|v| format!("{v:.6}")).collect();
                let _ = writeln!(s, "    fitted line: intercept {}  slope {}", parts[0], parts[1..].join(", "));
            }
            if let Some(note) = &n.note {
                let _ = writeln!(s, "    {note}");
            }
            if !n.parents.is_empty() {
                let _ = writeln!(s, "    parents {}", n.parents.join(", "));
            }
            if !n.alternatives.is_empty() {
                let _ = writeln!(s, "    alternatives:");
                for a in &n.alternatives {
                    let _ = writeln!(s, "      c={:<3} loss {}  {}", a.complexity, fmt_opt(a.loss), a.expr_infix);
                }
            }
        }
    }
    let _ = writeln!(s);
    match &chain.final_model {
        Some(f) => {
            let _ = writeln!(s, "final model: {}", f.kind);
            if let Some(p) = &f.poly {
                let _ = writeln!(
                    s,
                    "  polynomial of degree {} over [{}]{}",
                    p.model.degree,
                    p.inputs.join(", "),
                    if p.log_space { " in log space" } else { "" }
                );
            }
            if let Some(t) = &f.transform {
                let _ = writeln!(
                    s,
                    "  {} * ({}) = F{}({} * ({})){}",
                    chain.frame_target,
                    t.sr1_infix,
                    t.order,
                    t.baseline_infix,
                    t.sr2_infix,
                    if t.log_space { " in log space" } else { "" }
                );
            }
            let _ = writeln!(s, "  R2 {}  MRE {}", fmt_opt(f.r2), fmt_opt(f.mre));
            if f.holdout_mre.is_some() {
                let _ = writeln!(s, "  holdout MRE {}", fmt_opt(f.holdout_mre));
            }
        }
        None => {
            let _ = writeln!(s, "final model: none");
        }
    }
    if !chain.notes.is_empty() {
        let _ = writeln!(s, "\nnotes:");
        for n in &chain.notes {
            let _ = writeln!(s, "  {n}");
        }
    }
    s
}

/// Serializes the chain as `json` or `text`.
pub fn export_chain(chain: &KnowledgeChain, format: &str) -> Result<String, ChainError> {
    match format {
        "json" => serde_json::to_string_pretty(chain).map_err(|e| ChainError::Json(e.to_string())),
        "text" => Ok(render_text(chain)),
        other => Err(ChainError::UnknownFormat(other.to_string())),
    }
}

pub fn import_chain(json: &str) -> Result<KnowledgeChain, ChainError> {
    serde_json::from_str(json).map_err(|e| ChainError::Json(e.to_string()))
}

/// Tab-separated Pareto front: complexity, loss, knee score, expression.
pub fn front_table(front: &ParetoFront, names: &[String]) -> String {
    let scores = knee_scores(front);
    let mut s = String::from("complexity\tloss\tscore\texpression\n");
    for (e, sc) in front.entries().iter().zip(scores) {
        let _ = writeln!(s, "{}\t{:e}\t{:.6}\t{}", e.complexity, e.loss, sc, e.expr.format_with(names));
    }
    s
}

/// Data-collapse columns of the final model as tab-separated text.
pub fn collapse_table(chain: &KnowledgeChain, data: &Dataset) -> Result<String, ChainError> {
    let ev = evaluate_chain(chain, data)?;
    let mut s = String::from("target\tprediction\n");
    for (y, p) in ev.target.iter().zip(&ev.predictions) {
        let _ = writeln!(s, "{y:e}\t{p:e}");
    }
    Ok(s)
}

/// Convenience for tests and the command line: the engine's knee selection.
pub fn knee(front: &ParetoFront) -> Option<(&engine::FrontEntry, f64)> {
    select_candidate(front)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dims::{BaseDims, DimVector};

    fn tiny_config() -> EngineConfig {
        EngineConfig { population_size: 120, iterations: 6, islands: 2, ..EngineConfig::default() }
    }

    fn quadratic_data() -> Dataset {
        let u: Vec<f64> = (1..=40).map(|i| i as f64 / 8.0).collect();
        let y: Vec<f64> = u.iter().map(|v| v * v + 3.0 * v).collect();
        let base = BaseDims::default();
        Dataset::from_columns(
            base,
            vec![("u".into(), Some(DimVector::zeros(4)), u), ("y".into(), Some(DimVector::zeros(4)), y)],
            Some(1),
        )
        .unwrap()
    }

    fn compression_only(layers: Vec<LayerSpec>) -> ChainConfig {
        ChainConfig {
            seed: 3,
            engine: tiny_config(),
            plan: StagePlan {
                stages: vec![Stage::Compression(CompressionStage {
                    layers,
                    augment: true,
                    log_space: false,
                    degree: DegreePolicy::default(),
                    r2_target: 0.99,
                    margin: 1e-3,
                    max_features: 8,
                    engine: EngineOverrides::default(),
                })],
            },
            holdout: None,
            reference_groups: Vec::new(),
        }
    }

    fn layer(k: usize) -> LayerSpec {
        LayerSpec {
            intermediates: k,
            names: Vec::new(),
            variables: None,
            branch_variables: None,
            degree: None,
            engine: EngineOverrides::default(),
        }
    }

    #[test]
    fn plan_validation() {
        let ok = compression_only(vec![layer(2), layer(1)]);
        assert!(ok.plan.validate().is_ok());
        let bad = compression_only(vec![layer(1), layer(1)]);
        assert!(matches!(bad.plan.validate(), Err(ChainError::PlanInvalid(_))));
        let mut late = compression_only(vec![layer(1)]);
        late.plan.stages.push(Stage::Invariance(InvarianceStage {
            run_implicit: false,
            nondimensionalize: true,
            implicit_variables: None,
            ceiling: 1e-2,
            implicit_name: None,
            max_exponent: 3,
            engine: EngineOverrides::default(),
        }));
        assert!(late.plan.validate().is_err());
    }

    #[test]
    fn polynomial_target_stops_after_one_layer() {
        let d = quadratic_data();
        let run = run_chain(&d, &compression_only(vec![layer(1)]), None).unwrap();
        assert!(run.failure.is_none());
        assert_eq!(run.chain.layers.len(), 1);
        let f = run.chain.final_model.as_ref().unwrap();
        assert!(f.r2.unwrap() > 0.999999);
        let ev = evaluate_chain(&run.chain, &d).unwrap();
        assert!((ev.r2 - f.r2.unwrap()).abs() < 1e-9);
        assert!((ev.mre - f.mre.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn export_round_trip_and_formats() {
        let d = quadratic_data();
        let run = run_chain(&d, &compression_only(vec![layer(1)]), Some("toy")).unwrap();
        let json = export_chain(&run.chain, "json").unwrap();
        let back = import_chain(&json).unwrap();
        assert_eq!(back, run.chain);
        assert_eq!(evaluate_chain(&back, &d).unwrap(), evaluate_chain(&run.chain, &d).unwrap());
        assert_eq!(render_text(&back), render_text(&run.chain));
        assert!(matches!(export_chain(&run.chain, "yaml"), Err(ChainError::UnknownFormat(_))));
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["seed", "config_hash", "dataset_sha256"] {
            assert!(v["meta"].get(key).is_some(), "{key}");
        }
        let node = &v["layers"][0]["nodes"][0];
        for key in ["name", "expr_infix", "expr_tree", "loss_mode", "loss", "complexity", "r2"] {
            assert!(node.get(key).is_some(), "{key}");
        }
        assert_eq!(v["final"]["kind"], "poly");
    }

    #[test]
    fn empty_chain_is_a_signature_mismatch() {
        let d = quadratic_data();
        let mut run = run_chain(&d, &compression_only(vec![layer(1)]), None).unwrap();
        run.chain.final_model = None;
        assert!(matches!(evaluate_chain(&run.chain, &d), Err(ChainError::SignatureMismatch(_))));
        let other = Dataset::from_xy(vec![vec![1.0, 2.0]], Some(vec![1.0, 2.0])).unwrap();
        let run = run_chain(&d, &compression_only(vec![layer(1)]), None).unwrap();
        assert!(matches!(evaluate_chain(&run.chain, &other), Err(ChainError::SignatureMismatch(_))));
    }

    #[test]
    fn linear_relation_skips_transformation() {
        let d = quadratic_data();
        let stage = TransformStage {
            order: 1,
            log_space: false,
            baseline: "u^2+3*u".into(),
            variables: None,
            pin_sr1: None,
            pin_sr2: None,
            references: Vec::new(),
            activation_degree: 2,
            r2_threshold: 0.99,
            name: None,
            engine: EngineOverrides::default(),
        };
        let cfg = compression_only(vec![layer(1)]);
        let t = run_transformation(&d, &stage, &cfg, 0, 0).unwrap();
        assert!(t.final_model.is_none());
        assert_eq!(t.layer.nodes[0].role, NodeRole::Marker);
    }
}
