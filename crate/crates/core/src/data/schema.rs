use std::collections::BTreeSet;

use log::warn;
use sha2::{Digest, Sha256};

use super::{Encoded, EncodedSample, FieldKind, FieldSpec, RawValue, SequencedSample};
use crate::error::{Error, Result};

/// A fitted input field.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField {
    pub name: String,
    pub kind: FieldKind,
    /// Sorted, duplicate-free categories (categorical kinds only).
    pub vocab: Vec<String>,
    /// Training-split statistics (numerical only).
    pub mean: f64,
    pub std: f64,
}

impl FeatureField {
    /// Index reserved for categories not seen in training.
    pub fn oov_index(&self) -> usize {
        self.vocab.len()
    }

    pub fn spec(&self) -> FieldSpec {
        FieldSpec::new(self.name.clone(), self.kind)
    }
}

/// Ordered fitted fields. This order is the feature order of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub fields: Vec<FeatureField>,
}

impl Schema {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.fields.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn numerical_count(&self) -> usize {
        self.fields.iter().filter(|f| !f.kind.is_categorical()).count()
    }

    /// Position of each field among the fields of the same family
    /// (numerical fields index the basis rows, categorical ones their tables).
    pub fn family_positions(&self) -> Vec<usize> {
        let (mut num, mut cat) = (0, 0);
        self.fields
            .iter()
            .map(|f| {
                let slot = if f.kind.is_categorical() { &mut cat } else { &mut num };
                *slot += 1;
                *slot - 1
            })
            .collect()
    }

    /// Stable 64-bit hash of field names and kinds.
    pub fn hash(&self) -> u64 {
        hash_specs(self.fields.iter().map(|f| (f.name.as_str(), f.kind)))
    }
}

pub fn hash_specs<'a>(specs: impl Iterator<Item = (&'a str, FieldKind)>) -> u64 {
    let mut h = Sha256::new();
    for (name, kind) in specs {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update(kind.as_str().as_bytes());
        h.update(b"\n");
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Clone, Debug)]
pub struct SchemaBuild {
    pub schema: Schema,
    /// Names of zero-variance numerical fields that were dropped.
    pub dropped: Vec<String>,
}

/// Fits vocabularies and numerical statistics on training samples.
///
/// Numerical statistics use the sample (n - 1) standard deviation over
/// non-missing cells of every step.
pub fn build_schema(train: &[SequencedSample]) -> Result<SchemaBuild> {
    let Some(first) = train.first() else {
        return Err(Error::Contract("build_schema needs at least one training sample".into()));
    };
    let specs = first.fields.clone();
    let mut fields = Vec::new();
    let mut dropped = Vec::new();
    for (j, spec) in specs.iter().enumerate() {
        let cells = train.iter().flat_map(|s| s.steps.iter().map(move |st| &st[j]));
        match spec.kind {
            FieldKind::Numerical => {
                let xs: Vec<f64> = cells.filter_map(RawValue::as_number).collect();
                let (mean, std) = mean_std(&xs);
                if xs.len() < 2 || std <= 0.0 || !std.is_finite() {
                    warn!("dropping zero-variance field `{}`", spec.name);
                    dropped.push(spec.name.clone());
                    continue;
                }
                fields.push(FeatureField {
                    name: spec.name.clone(),
                    kind: spec.kind,
                    vocab: Vec::new(),
                    mean,
                    std,
                });
            }
            FieldKind::Categorical | FieldKind::MultiValued => {
                let mut vocab = BTreeSet::new();
                for c in cells {
                    match c {
                        RawValue::Category(s) => {
                            vocab.insert(s.clone());
                        }
                        RawValue::Distribution(d) => vocab.extend(d.iter().map(|(n, _)| n.clone())),
                        RawValue::Number(_) => {}
                    }
                }
                if vocab.is_empty() {
                    return Err(Error::Ingest(format!("categorical field `{}` has no values", spec.name)));
                }
                fields.push(FeatureField {
                    name: spec.name.clone(),
                    kind: spec.kind,
                    vocab: vocab.into_iter().collect(),
                    mean: 0.0,
                    std: 1.0,
                });
            }
        }
    }
    if fields.is_empty() {
        return Err(Error::Ingest("no usable fields after schema build".into()));
    }
    Ok(SchemaBuild {
        schema: Schema { fields },
        dropped,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Standardizes numerical values and maps categories to vocabulary indices.
///
/// Missing numerical cells become 0 (the standardized training mean); unseen
/// categories map to the out-of-vocabulary slot.
pub fn normalize(sample: &SequencedSample, schema: &Schema) -> Result<EncodedSample> {
    let cols = schema
        .fields
        .iter()
        .map(|f| {
            sample
                .field_index(&f.name)
                .ok_or_else(|| Error::SchemaMismatch(format!("sample lacks field `{}`", f.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    let steps = sample
        .steps
        .iter()
        .map(|step| {
            schema
                .fields
                .iter()
                .zip(&cols)
                .map(|(f, &c)| encode(f, &step[c]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedSample {
        entity_id: sample.entity_id.clone(),
        steps,
        label: sample.label,
    })
}

pub fn normalize_all(samples: &[SequencedSample], schema: &Schema) -> Result<Vec<EncodedSample>> {
    samples.iter().map(|s| normalize(s, schema)).collect()
}

fn encode(field: &FeatureField, value: &RawValue) -> Result<Encoded> {
    let lookup = |c: &str| field.vocab.binary_search_by(|v| v.as_str().cmp(c)).unwrap_or(field.oov_index());
    Ok(match (field.kind, value) {
        (FieldKind::Numerical, RawValue::Number(x)) => {
            Encoded::Number(x.map_or(0.0, |x| (x - field.mean) / field.std))
        }
        (FieldKind::Categorical, RawValue::Category(c)) => Encoded::Index(lookup(c)),
        (FieldKind::MultiValued, RawValue::Distribution(d)) => {
            let mut w = vec![0.0; field.vocab.len() + 1];
            for (name, p) in d {
                w[lookup(name)] += p;
            }
            Encoded::Distribution(w)
        }
        (FieldKind::MultiValued, RawValue::Category(c)) => Encoded::Index(lookup(c)),
        (kind, v) => {
            return Err(Error::SchemaMismatch(format!(
                "field `{}` of kind {kind} cannot take value {v:?}",
                field.name
            )))
        }
    })
}
