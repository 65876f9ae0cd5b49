//! Built-in cases, CSV ingestion, the gravitation generator and synthetic
//! fallback data.
//!
//! A case is a TOML document naming its variables with their dimensions,
//! where the data comes from, the oracle laws used to synthesize data when
//! no file ships, and the stage plan that the chain runner executes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainConfig, EngineOverrides, NamedExpr, StagePlan};
use crate::dataset::{Dataset, Provenance};
use crate::dims::{check_homogeneity, parse_rational, rational_from_int, BaseDims, DimVector, DimsError};
use crate::engine::EngineConfig;
use crate::expr::{parse_with_names, Expr};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("invalid case config: {0}")]
    Config(String),
    #[error("CSV header does not match the case: missing {missing:?}, unexpected {extra:?}")]
    SchemaMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("no usable rows left after filtering ({rejected} rejected)")]
    EmptyAfterFiltering { rejected: usize },
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("cannot parse `{text}`: {message}")]
    Parse { text: String, message: String },
    #[error("expression `{name}` has {violations} dimensional violation(s)")]
    NotHomogeneous { name: String, violations: usize },
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("case `{0}` has neither a data file nor a fallback law")]
    NoData(String),
    #[error(transparent)]
    Dims(#[from] DimsError),
}

/// An exponent written as an integer or as a rational string such as `"1/2"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exponent {
    Int(i64),
    Text(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    Input,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub name: String,
    #[serde(default)]
    pub role: Role,
    /// Base dimension name to exponent; absent bases are zero.
    #[serde(default)]
    pub dims: BTreeMap<String, Exponent>,
    /// Sampling range for synthetic data (log-uniform when positive).
    #[serde(default)]
    pub range: Option<(f64, f64)>,
    /// Values are divided by this after loading.
    #[serde(default)]
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default)]
    pub file: Option<String>,
    /// Computes further columns from the loaded ones (`gravitation`).
    #[serde(default)]
    pub generator: Option<String>,
    #[serde(default)]
    pub ignore_columns: Vec<String>,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FallbackSpec {
    pub n: usize,
    pub noise_rel: f64,
    pub seed: u64,
    /// Target as a function of the input variables.
    pub law: String,
}

/// Template with free constants fitted on the final π frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSpec {
    pub expr: String,
    pub start: Vec<f64>,
    #[serde(default)]
    pub expected: Vec<f64>,
}

fn adhoc() -> String {
    "adhoc".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    #[serde(default = "adhoc")]
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub description: String,
    /// Base dimension names; `M, L, T, Theta` when absent.
    #[serde(default)]
    pub base: Option<Vec<String>>,
    pub variables: Vec<VariableSpec>,
    #[serde(default)]
    pub data: Option<DataSource>,
    #[serde(default)]
    pub fallback: Option<FallbackSpec>,
    #[serde(default)]
    pub oracles: Vec<NamedExpr>,
    #[serde(default)]
    pub reference_groups: Vec<NamedExpr>,
    #[serde(default)]
    pub template: Option<TemplateSpec>,
    #[serde(default)]
    pub plan: StagePlan,
    #[serde(default)]
    pub engine: EngineOverrides,
    #[serde(default)]
    pub holdout: Option<f64>,
}

const GRAVITATION_OUTPUTS: &[&str] = &["F"];

impl CaseSpec {
    pub fn from_toml(text: &str) -> Result<CaseSpec, CaseError> {
        let spec: CaseSpec = toml::from_str(text).map_err(|e| CaseError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<CaseSpec, CaseError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CaseError::Io { path: path.display().to_string(), message: e.to_string() })?;
        CaseSpec::from_toml(&text)
    }

    pub fn base_dims(&self) -> BaseDims {
        self.base.as_ref().map_or_else(BaseDims::default, |b| BaseDims::new(b.iter().cloned()))
    }

    pub fn names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    pub fn input_names(&self) -> Vec<String> {
        self.variables.iter().filter(|v| v.role == Role::Input).map(|v| v.name.clone()).collect()
    }

    pub fn target_name(&self) -> &str {
        &self.variables.iter().find(|v| v.role == Role::Target).expect("validated case has a target").name
    }

    pub fn variable(&self, name: &str) -> Option<&VariableSpec> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn dim_vector(&self, v: &VariableSpec) -> Result<DimVector, CaseError> {
        let base = self.base_dims();
        let mut entries = Vec::new();
        for (k, e) in &v.dims {
            let r = match e {
                Exponent::Int(i) => rational_from_int(*i),
                Exponent::Text(t) => parse_rational(t)?,
            };
            entries.push((k.as_str(), r));
        }
        Ok(base.vector(entries)?)
    }

    /// Dimension vectors in variable order.
    pub fn var_dims(&self) -> Result<Vec<DimVector>, CaseError> {
        self.variables.iter().map(|v| self.dim_vector(v)).collect()
    }

    /// Columns produced by the data generator rather than read from the file.
    pub fn generated_columns(&self) -> &'static [&'static str] {
        match self.data.as_ref().and_then(|d| d.generator.as_deref()) {
            Some("gravitation") => GRAVITATION_OUTPUTS,
            _ => &[],
        }
    }

    /// Parses an expression over all variable names.
    pub fn parse(&self, text: &str) -> Result<Expr, CaseError> {
        parse_with_names(text, &self.names())
            .map_err(|e| CaseError::Parse { text: text.to_string(), message: e.to_string() })
    }

    pub fn oracle(&self, name: &str) -> Option<Expr> {
        self.oracles.iter().find(|o| o.name == name).and_then(|o| self.parse(&o.expr).ok())
    }

    pub fn has_data_file(&self) -> bool {
        self.data.as_ref().is_some_and(|d| d.file.is_some())
    }

    /// Reads a dimension file: a case document of which only `base` and
    /// `variables` matter. `target` reassigns the roles; a file without a
    /// target is accepted for π analysis.
    pub fn dims_file(text: &str, target: Option<&str>) -> Result<CaseSpec, CaseError> {
        let mut spec: CaseSpec = toml::from_str(text).map_err(|e| CaseError::Config(e.to_string()))?;
        if let Some(t) = target {
            if spec.variable(t).is_none() {
                return Err(CaseError::Config(format!("target `{t}` is not a declared variable")));
            }
            for v in &mut spec.variables {
                v.role = if v.name == t { Role::Target } else { Role::Input };
            }
        }
        spec.check(false)?;
        Ok(spec)
    }

    pub fn has_target(&self) -> bool {
        self.variables.iter().any(|v| v.role == Role::Target)
    }

    pub fn validate(&self) -> Result<(), CaseError> {
        self.check(true)
    }

    fn check(&self, require_target: bool) -> Result<(), CaseError> {
        let bad = |m: String| Err(CaseError::Config(m));
        let targets = self.variables.iter().filter(|v| v.role == Role::Target).count();
        if targets > 1 || (require_target && targets == 0) {
            return bad(format!("case `{}` declares {targets} targets, expected exactly one", self.id));
        }
        let names = self.names();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return bad(format!("variable `{n}` declared twice"));
            }
        }
        for v in &self.variables {
            if let Some(s) = v.scale {
                if !(s.is_finite() && s != 0.0) {
                    return bad(format!("variable `{}` has an invalid scale", v.name));
                }
            }
            if let Some((lo, hi)) = v.range {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return bad(format!("variable `{}` has an invalid range", v.name));
                }
            }
        }
        let dims = self.var_dims()?;
        let mut laws: Vec<(&str, &str)> = self.oracles.iter().map(|o| (o.name.as_str(), o.expr.as_str())).collect();
        if let Some(f) = &self.fallback {
            laws.push(("fallback law", f.law.as_str()));
        }
        for (name, text) in laws {
            let e = self.parse(text)?;
            let h = check_homogeneity(&e, &dims);
            if h.violations > 0 {
                return Err(CaseError::NotHomogeneous { name: name.to_string(), violations: h.violations });
            }
        }
        if let Some(f) = &self.fallback {
            let e = self.parse(&f.law)?;
            let Some(t) = self.variables.iter().position(|v| v.role == Role::Target) else {
                return bad("a fallback law needs a target".into());
            };
            if e.variables().contains(&t) {
                return bad("the fallback law may not reference the target".into());
            }
            for i in e.variables() {
                if self.variables[i].range.is_none() {
                    return bad(format!("fallback law uses `{}` which has no range", names[i]));
                }
            }
        }
        self.plan.validate().map_err(|e| CaseError::Config(e.to_string()))
    }

    /// Chain settings for this case at `seed`.
    pub fn chain_config(&self, seed: u64) -> ChainConfig {
        let engine = self.engine.apply(&EngineConfig::default());
        ChainConfig {
            seed,
            engine: EngineConfig { seed, ..engine },
            plan: self.plan.clone(),
            holdout: self.holdout,
            reference_groups: self.reference_groups.clone(),
        }
    }
}

/// A parsed CSV file with its rejected-row count.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvLoad {
    pub dataset: Dataset,
    pub rejected_rows: usize,
}

/// Reads a CSV file against the case variables; see [`load_csv_str`].
pub fn load_csv(path: &Path, spec: &CaseSpec) -> Result<CsvLoad, CaseError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CaseError::Io { path: path.display().to_string(), message: e.to_string() })?;
    load_csv_str(&text, &path.display().to_string(), spec)
}

/// Parses CSV text: one header row, comma separated, `.` decimals.
///
/// Every case variable not produced by a generator must appear in the
/// header; other columns must be listed in `ignore_columns`. Rows with a
/// missing or non-finite value are dropped and counted. Columns with a
/// `scale` are divided by it.
pub fn load_csv_str(text: &str, origin: &str, spec: &CaseSpec) -> Result<CsvLoad, CaseError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> =
        reader.headers().map_err(|e| CaseError::Csv(e.to_string()))?.iter().map(str::to_string).collect();
    let generated = spec.generated_columns();
    let expected: Vec<&VariableSpec> =
        spec.variables.iter().filter(|v| !generated.contains(&v.name.as_str())).collect();
    let ignore: &[String] = spec.data.as_ref().map_or(&[], |d| &d.ignore_columns);
    let missing: Vec<String> =
        expected.iter().filter(|v| !header.contains(&v.name)).map(|v| v.name.clone()).collect();
    let extra: Vec<String> = header
        .iter()
        .filter(|h| !expected.iter().any(|v| &v.name == *h) && !ignore.contains(h))
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(CaseError::SchemaMismatch { missing, extra });
    }
    let positions: Vec<usize> =
        expected.iter().map(|v| header.iter().position(|h| h == &v.name).expect("checked above")).collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); expected.len()];
    let mut rejected = 0;
    for record in reader.records() {
        let record = record.map_err(|e| CaseError::Csv(e.to_string()))?;
        let row: Option<Vec<f64>> = positions
            .iter()
            .map(|&p| record.get(p).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect();
        match row {
            Some(values) => {
                for ((col, v), var) in columns.iter_mut().zip(values).zip(&expected) {
                    col.push(var.scale.map_or(v, |s| v / s));
                }
            }
            None => rejected += 1,
        }
    }
    if columns.first().is_none_or(Vec::is_empty) {
        return Err(CaseError::EmptyAfterFiltering { rejected });
    }
    let target = expected.iter().position(|v| v.role == Role::Target);
    let cols = expected
        .iter()
        .zip(columns)
        .map(|(v, c)| Ok((v.name.clone(), Some(spec.dim_vector(v)?), c)))
        .collect::<Result<Vec<_>, CaseError>>()?;
    let dataset = Dataset::from_columns(spec.base_dims(), cols, target)
        .map_err(|e| CaseError::Csv(e.to_string()))?
        .with_provenance(Provenance::Source { path: origin.to_string() });
    Ok(CsvLoad { dataset, rejected_rows: rejected })
}

/// Parses CSV text without a case: every column is numeric, none carries
/// dimensions, and `target` (if any) names the target column.
pub fn load_plain_csv_str(text: &str, origin: &str, target: Option<&str>) -> Result<CsvLoad, CaseError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> =
        reader.headers().map_err(|e| CaseError::Csv(e.to_string()))?.iter().map(str::to_string).collect();
    let target = match target {
        Some(t) => Some(header.iter().position(|h| h == t).ok_or_else(|| CaseError::SchemaMismatch {
            missing: vec![t.to_string()],
            extra: Vec::new(),
        })?),
        None => None,
    };
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    let mut rejected = 0;
    for record in reader.records() {
        let record = record.map_err(|e| CaseError::Csv(e.to_string()))?;
        let row: Option<Vec<f64>> =
            (0..header.len()).map(|p| record.get(p).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite())).collect();
        match row {
            Some(values) => columns.iter_mut().zip(values).for_each(|(c, v)| c.push(v)),
            None => rejected += 1,
        }
    }
    if columns.first().is_none_or(Vec::is_empty) {
        return Err(CaseError::EmptyAfterFiltering { rejected });
    }
    let cols = header.into_iter().zip(columns).map(|(n, c)| (n, None, c)).collect();
    let dataset = Dataset::from_columns(BaseDims::default(), cols, target)
        .map_err(|e| CaseError::Csv(e.to_string()))?
        .with_provenance(Provenance::Source { path: origin.to_string() });
    Ok(CsvLoad { dataset, rejected_rows: rejected })
}

/// One orbiting pair in normalized units (solar masses, AU, years).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Body {
    /// Central mass M.
    pub central: f64,
    /// Companion mass m.
    pub companion: f64,
    /// Separation R.
    pub distance: f64,
    /// Period T.
    pub period: f64,
}

/// Force on the companion from circular barycentric kinematics:
/// `F = m * (4π²/T²) * R * M/(M+m)`.
pub fn gravitation_force(b: &Body) -> f64 {
    let w2 = 4.0 * std::f64::consts::PI.powi(2) / (b.period * b.period);
    b.companion * w2 * b.distance * b.central / (b.central + b.companion)
}

/// Dataset with columns `M, m, R, T, F`; `F` is the target.
pub fn generate_gravitation(bodies: &[Body]) -> Dataset {
    let base = BaseDims::default();
    let d = |e: &[i64]| Some(DimVector::from_ints(e));
    let cols = vec![
        ("M".to_string(), d(&[1, 0, 0, 0]), bodies.iter().map(|b| b.central).collect()),
        ("m".to_string(), d(&[1, 0, 0, 0]), bodies.iter().map(|b| b.companion).collect()),
        ("R".to_string(), d(&[0, 1, 0, 0]), bodies.iter().map(|b| b.distance).collect()),
        ("T".to_string(), d(&[0, 0, 1, 0]), bodies.iter().map(|b| b.period).collect()),
        ("F".to_string(), d(&[1, 1, -2, 0]), bodies.iter().map(gravitation_force).collect()),
    ];
    Dataset::from_columns(base, cols, Some(4))
        .expect("generated columns share the row count")
        .with_provenance(Provenance::Generated { generator: "gravitation".into(), from: "bodies".into() })
}

fn bodies_of(d: &Dataset) -> Result<Vec<Body>, CaseError> {
    let col = |n: &str| {
        d.column_by_name(n).ok_or_else(|| CaseError::SchemaMismatch { missing: vec![n.to_string()], extra: Vec::new() })
    };
    let (mm, m, r, t) = (col("M")?, col("m")?, col("R")?, col("T")?);
    Ok((0..d.nrows()).map(|i| Body { central: mm[i], companion: m[i], distance: r[i], period: t[i] }).collect())
}

/// Files shipped with the crate, by name.
pub fn embedded_file(name: &str) -> Option<&'static str> {
    match name {
        "solar_system.csv" => Some(include_str!("../../../data/solar_system.csv")),
        "binary_exoplanet.csv" => Some(include_str!("../../../data/binary_exoplanet.csv")),
        _ => None,
    }
}

const BUILTIN_CONFIGS: &[&str] = &[
    include_str!("../../../cases/gravitation_solar.toml"),
    include_str!("../../../cases/gravitation_binary.toml"),
    include_str!("../../../cases/rayleigh_benard.toml"),
    include_str!("../../../cases/pipe_flow.toml"),
    include_str!("../../../cases/keyhole.toml"),
    include_str!("../../../cases/aero_sharp_cone.toml"),
    include_str!("../../../cases/aero_blunt_body.toml"),
];

/// All shipped cases.
pub fn builtin_cases() -> Vec<CaseSpec> {
    BUILTIN_CONFIGS.iter().map(|t| CaseSpec::from_toml(t).expect("built-in case config is valid")).collect()
}

pub fn builtin_case(id: &str) -> Result<CaseSpec, CaseError> {
    builtin_cases().into_iter().find(|c| c.id == id).ok_or_else(|| CaseError::UnknownCase(id.to_string()))
}

/// How a case's data was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataMode {
    Shipped { file: String, rejected_rows: usize },
    Fallback { seed: u64, noise_rel: f64 },
}

impl DataMode {
    pub fn label(&self) -> &'static str {
        match self {
            DataMode::Shipped { .. } => "shipped",
            DataMode::Fallback { .. } => "synthetic fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseData {
    pub dataset: Dataset,
    pub mode: DataMode,
}

fn read_source(spec: &CaseSpec, file: &str, base_dir: Option<&Path>) -> Result<Option<CsvLoad>, CaseError> {
    if let Some(text) = embedded_file(file) {
        return load_csv_str(text, &format!("data/{file}"), spec).map(Some);
    }
    let path = base_dir.map_or_else(|| Path::new(file).to_path_buf(), |d| d.join(file));
    if path.exists() { load_csv(&path, spec).map(Some) } else { Ok(None) }
}

fn apply_generator(spec: &CaseSpec, load: CsvLoad) -> Result<Dataset, CaseError> {
    match spec.data.as_ref().and_then(|d| d.generator.as_deref()) {
        None => Ok(load.dataset),
        Some("gravitation") => {
            let from = load.dataset.provenance().label();
            let bodies = bodies_of(&load.dataset)?;
            Ok(generate_gravitation(&bodies)
                .with_provenance(Provenance::Generated { generator: "gravitation".into(), from }))
        }
        Some(other) => Err(CaseError::Config(format!("unknown generator `{other}`"))),
    }
}

/// The case dataset: the data file when it can be found, else the fallback.
/// Relative file names are resolved against `base_dir` after the embedded files.
pub fn case_data(spec: &CaseSpec, base_dir: Option<&Path>) -> Result<CaseData, CaseError> {
    if let Some(file) = spec.data.as_ref().and_then(|d| d.file.clone()) {
        if let Some(load) = read_source(spec, &file, base_dir)? {
            let rejected_rows = load.rejected_rows;
            let dataset = apply_generator(spec, load)?;
            return Ok(CaseData { dataset, mode: DataMode::Shipped { file, rejected_rows } });
        }
    }
    let f = spec.fallback.as_ref().ok_or_else(|| CaseError::NoData(spec.id.clone()))?;
    let dataset = synthesize_fallback(spec, f.n, f.noise_rel, f.seed)?;
    Ok(CaseData { dataset, mode: DataMode::Fallback { seed: f.seed, noise_rel: f.noise_rel } })
}

/// The case dataset read from an explicit file, with the case's generator applied.
pub fn case_data_from(spec: &CaseSpec, path: &Path) -> Result<CaseData, CaseError> {
    let load = load_csv(path, spec)?;
    let rejected_rows = load.rejected_rows;
    let dataset = apply_generator(spec, load)?;
    Ok(CaseData { dataset, mode: DataMode::Shipped { file: path.display().to_string(), rejected_rows } })
}

/// Sampling ranges of the inputs: the data file's min/max when it can be
/// read, else the configured ranges.
pub fn sampling_ranges(spec: &CaseSpec) -> BTreeMap<String, (f64, f64)> {
    let mut out: BTreeMap<String, (f64, f64)> =
        spec.variables.iter().filter_map(|v| v.range.map(|r| (v.name.clone(), r))).collect();
    let shipped = spec.data.as_ref().and_then(|d| d.file.as_deref()).and_then(embedded_file);
    if let Some(text) = shipped {
        if let Ok(load) = load_csv_str(text, "", spec) {
            for (i, name) in load.dataset.names().iter().enumerate() {
                let c = load.dataset.column(i);
                let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                out.insert(name.clone(), (lo, hi));
            }
        }
    }
    out
}

fn sample(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else if lo > 0.0 {
        (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
    } else {
        lo + rng.random::<f64>() * (hi - lo)
    }
}

/// Samples the inputs over their ranges (log-uniform for positive ranges),
/// computes the target from the fallback law and applies multiplicative
/// Gaussian noise of relative size `noise_rel`.
pub fn synthesize_fallback(spec: &CaseSpec, n: usize, noise_rel: f64, seed: u64) -> Result<Dataset, CaseError> {
    let f = spec.fallback.as_ref().ok_or_else(|| CaseError::NoData(spec.id.clone()))?;
    let law = spec.parse(&f.law)?;
    let ranges = sampling_ranges(spec);
    let names = spec.names();
    let t = names.iter().position(|n| n == spec.target_name()).expect("target exists");
    let inputs: Vec<usize> = (0..names.len()).filter(|&i| i != t).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(n); names.len()];
    let mut row = vec![vec![0.0]; names.len()];
    let mut attempts = 0;
    while columns[t].len() < n {
        attempts += 1;
        if attempts > 100 * n.max(1) {
            return Err(CaseError::Config(format!("fallback law of `{}` is rarely finite on its ranges", spec.id)));
        }
        for &i in &inputs {
            let r = ranges.get(&names[i]).copied().ok_or_else(|| {
                CaseError::Config(format!("variable `{}` has no sampling range", names[i]))
            })?;
            row[i][0] = sample(&mut rng, r);
        }
        let z: f64 = rng.sample(StandardNormal);
        let y = law.evaluate(&row).values[0] * (1.0 + noise_rel * z);
        if !y.is_finite() {
            continue;
        }
        for &i in &inputs {
            columns[i].push(row[i][0]);
        }
        columns[t].push(y);
    }
    let cols = spec
        .variables
        .iter()
        .zip(columns)
        .map(|(v, c)| Ok((v.name.clone(), Some(spec.dim_vector(v)?), c)))
        .collect::<Result<Vec<_>, CaseError>>()?;
    Ok(Dataset::from_columns(spec.base_dims(), cols, Some(t))
        .map_err(|e| CaseError::Config(e.to_string()))?
        .with_provenance(Provenance::Synthetic { seed, noise_rel }))
}
