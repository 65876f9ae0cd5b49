//! Column-oriented sample tables with per-column physical dimensions.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dims::{BaseDims, DimVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("column `{name}` has {got} rows, expected {expected}")]
    RaggedColumn { name: String, expected: usize, got: usize },
    #[error("duplicate column name `{0}`")]
    DuplicateName(String),
    #[error("dataset has no columns")]
    NoColumns,
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// Loaded from a file on disk or shipped with the crate.
    Source { path: String },
    /// Sampled from an oracle law.
    Synthetic { seed: u64, noise_rel: f64 },
    /// Built by a generator from other recorded quantities.
    Generated { generator: String, from: String },
    /// Computed from another dataset.
    Derived { from: String },
    InMemory,
}

impl Provenance {
    pub fn label(&self) -> String {
        match self {
            Provenance::Source { path } => format!("source:{path}"),
            Provenance::Synthetic { seed, noise_rel } => format!("synthetic(seed={seed},noise={noise_rel})"),
            Provenance::Generated { generator, from } => format!("{generator}({from})"),
            Provenance::Derived { from } => format!("derived({from})"),
            Provenance::InMemory => "in-memory".to_string(),
        }
    }

    pub fn is_synthetic(&self) -> bool {
        match self {
            Provenance::Synthetic { .. } => true,
            Provenance::Derived { from } => from.starts_with("synthetic"),
            _ => false,
        }
    }
}

/// Named columns, optional dimension per column, and an optional target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    base: BaseDims,
    names: Vec<String>,
    dims: Vec<Option<DimVector>>,
    columns: Vec<Vec<f64>>,
    target: Option<usize>,
    provenance: Provenance,
}

impl Dataset {
    pub fn from_columns(
        base: BaseDims,
        cols: Vec<(String, Option<DimVector>, Vec<f64>)>,
        target: Option<usize>,
    ) -> Result<Self, DatasetError> {
        let Some(first) = cols.first() else {
            return Err(DatasetError::NoColumns);
        };
        let n = first.2.len();
        let mut names = Vec::with_capacity(cols.len());
        let mut dims = Vec::with_capacity(cols.len());
        let mut columns = Vec::with_capacity(cols.len());
        for (name, d, v) in cols {
            if v.len() != n {
                return Err(DatasetError::RaggedColumn { name, expected: n, got: v.len() });
            }
            if names.contains(&name) {
                return Err(DatasetError::DuplicateName(name));
            }
            names.push(name);
            dims.push(d);
            columns.push(v);
        }
        assert!(target.is_none_or(|t| t < columns.len()), "target index out of range");
        Ok(Dataset { base, names, dims, columns, target, provenance: Provenance::InMemory })
    }

    /// Dimensionless, unnamed-base convenience constructor: columns `x0..`, target last if `y` given.
    pub fn from_xy(x_cols: Vec<Vec<f64>>, y: Option<Vec<f64>>) -> Result<Self, DatasetError> {
        let mut cols: Vec<(String, Option<DimVector>, Vec<f64>)> =
            x_cols.into_iter().enumerate().map(|(i, c)| (format!("x{i}"), None, c)).collect();
        let target = y.map(|y| {
            cols.push(("y".to_string(), None, y));
            cols.len() - 1
        });
        Dataset::from_columns(BaseDims::default(), cols, target)
    }

    pub fn base(&self) -> &BaseDims {
        &self.base
    }

    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[f64]> {
        self.index_of(name).map(|i| self.column(i))
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn dims(&self, i: usize) -> Option<&DimVector> {
        self.dims[i].as_ref()
    }

    /// Dimensions of every column, or `None` if any column is undeclared.
    pub fn all_dims(&self) -> Option<Vec<DimVector>> {
        self.dims.iter().cloned().collect()
    }

    pub fn target(&self) -> Option<usize> {
        self.target
    }

    pub fn target_name(&self) -> Option<&str> {
        self.target.map(|t| self.name(t))
    }

    pub fn target_values(&self) -> Option<&[f64]> {
        self.target.map(|t| self.column(t))
    }

    /// Column indices other than the target.
    pub fn input_indices(&self) -> Vec<usize> {
        (0..self.ncols()).filter(|&i| Some(i) != self.target).collect()
    }

    pub fn set_target(&mut self, target: Option<usize>) {
        assert!(target.is_none_or(|t| t < self.ncols()));
        self.target = target;
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn set_provenance(&mut self, p: Provenance) {
        self.provenance = p;
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = p;
        self
    }

    /// Appends a column, returning its index.
    pub fn push_column(
        &mut self,
        name: impl Into<String>,
        dims: Option<DimVector>,
        values: Vec<f64>,
    ) -> Result<usize, DatasetError> {
        let name = name.into();
        if values.len() != self.nrows() {
            return Err(DatasetError::RaggedColumn { name, expected: self.nrows(), got: values.len() });
        }
        if self.names.contains(&name) {
            return Err(DatasetError::DuplicateName(name));
        }
        self.names.push(name);
        self.dims.push(dims);
        self.columns.push(values);
        Ok(self.columns.len() - 1)
    }

    /// Keeps only the listed columns (in that order); the target survives if listed.
    pub fn select_columns(&self, idx: &[usize]) -> Dataset {
        let target = self.target.and_then(|t| idx.iter().position(|&i| i == t));
        Dataset {
            base: self.base.clone(),
            names: idx.iter().map(|&i| self.names[i].clone()).collect(),
            dims: idx.iter().map(|&i| self.dims[i].clone()).collect(),
            columns: idx.iter().map(|&i| self.columns[i].clone()).collect(),
            target,
            provenance: self.provenance.clone(),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            base: self.base.clone(),
            names: self.names.clone(),
            dims: self.dims.clone(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
            target: self.target,
            provenance: self.provenance.clone(),
        }
    }

    /// SHA-256 over column names and the exact bit patterns of all values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, col) in self.names.iter().zip(&self.columns) {
            h.update(name.as_bytes());
            h.update([0u8]);
            for v in col {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Comma-separated text with one header row; values use shortest round-trip formatting.
    pub fn to_csv_string(&self) -> String {
        let mut out = self.names.join(",");
        out.push('\n');
        for r in 0..self.nrows() {
            let row: Vec<String> = self.columns.iter().map(|c| format!("{:?}", c[r])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}
