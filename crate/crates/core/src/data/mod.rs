//! Dataset schema, CSV ingestion, normalization, splitting, and synthetic data.

mod csv_io;
mod schema;
mod split;
mod synthetic;
mod wide;

use std::fmt;
use std::sync::Arc;

pub use csv_io::{load_csv, write_csv, IngestConfig, LoadOutcome, RowError};
pub use schema::{build_schema, hash_specs as hash_field_specs, normalize, normalize_all, FeatureField, Schema, SchemaBuild};
pub use split::{split, DatasetSplit};
pub use synthetic::{gen_synthetic_interaction, interaction_label};
pub use wide::{wide_to_long, WideInput};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FieldKind {
    Numerical,
    Categorical,
    /// Categorical field whose cells carry a weighted set of categories.
    MultiValued,
}

impl FieldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Numerical => "num",
            FieldKind::Categorical => "cat",
            FieldKind::MultiValued => "multi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "num" | "numerical" => Some(FieldKind::Numerical),
            "cat" | "categorical" => Some(FieldKind::Categorical),
            "multi" | "multivalued" => Some(FieldKind::MultiValued),
            _ => None,
        }
    }

    pub fn is_categorical(self) -> bool {
        !matches!(self, FieldKind::Numerical)
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A configured input column: name plus kind.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, kind: FieldKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn numerical(name: impl Into<String>) -> Self {
        Self::new(name, FieldKind::Numerical)
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self::new(name, FieldKind::Categorical)
    }

    /// Parses `name` or `name:kind` (kind defaults to numerical).
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, kind) = match s.rsplit_once(':') {
            Some((n, k)) => (
                n.trim(),
                FieldKind::parse(k.trim())
                    .ok_or_else(|| Error::config("fields", format!("unknown field kind `{k}`")))?,
            ),
            None => (s, FieldKind::Numerical),
        };
        if name.is_empty() {
            return Err(Error::config("fields", "empty field name"));
        }
        Ok(Self::new(name, kind))
    }
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name, self.kind)
    }
}

/// One raw cell value.
#[derive(Clone, Debug, PartialEq)]
pub enum RawValue {
    /// `None` is a missing cell, imputed with the training mean on normalization.
    Number(Option<f64>),
    Category(String),
    /// Category weights summing to 1.
    Distribution(Vec<(String, f64)>),
}

impl RawValue {
    pub fn number(x: f64) -> Self {
        RawValue::Number(Some(x))
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            RawValue::Number(x) => *x,
            _ => None,
        }
    }
}

/// One entity's ordered record of `T` steps plus its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct SequencedSample {
    pub entity_id: String,
    /// Field specs shared by every step, in column order.
    pub fields: Arc<Vec<FieldSpec>>,
    /// `steps[t][j]` is field `j` at step `t`.
    pub steps: Vec<Vec<RawValue>>,
    pub label: usize,
}

impl SequencedSample {
    pub fn time_span(&self) -> usize {
        self.steps.len()
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }
}

/// A field value after normalization against a [`Schema`].
#[derive(Clone, Debug, PartialEq)]
pub enum Encoded {
    Number(f64),
    /// Vocabulary index; `vocab.len()` is the out-of-vocabulary slot.
    Index(usize),
    /// Weights over `vocab.len() + 1` slots (the last one is out-of-vocabulary).
    Distribution(Vec<f64>),
}

/// A sample ready for the model: values in schema field order.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    pub entity_id: String,
    pub steps: Vec<Vec<Encoded>>,
    pub label: usize,
}

impl EncodedSample {
    pub fn time_span(&self) -> usize {
        self.steps.len()
    }
}

/// Parses a `name:weight;name:weight` cell and renormalizes it to sum to 1.
pub fn parse_distribution(cell: &str) -> std::result::Result<Vec<(String, f64)>, String> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for part in cell.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, w) = part
            .rsplit_once(':')
            .ok_or_else(|| format!("expected name:weight, got `{part}`"))?;
        let w: f64 = w
            .trim()
            .parse()
            .map_err(|_| format!("bad weight `{}` in `{part}`", w.trim()))?;
        if !w.is_finite() || w < 0.0 {
            return Err(format!("weight must be finite and nonnegative in `{part}`"));
        }
        match out.iter_mut().find(|(n, _)| n == name.trim()) {
            Some((_, acc)) => *acc += w,
            None => out.push((name.trim().to_string(), w)),
        }
    }
    let total: f64 = out.iter().map(|(_, w)| w).sum();
    if out.is_empty() || total <= 0.0 {
        return Err(format!("distribution `{cell}` has no positive weight"));
    }
    if (total - 1.0).abs() > 1e-12 {
        for (_, w) in &mut out {
            *w /= total;
        }
    }
    Ok(out)
}

pub fn format_distribution(dist: &[(String, f64)]) -> String {
    dist.iter()
        .map(|(n, w)| format!("{n}:{w}"))
        .collect::<Vec<_>>()
        .join(";")
}
