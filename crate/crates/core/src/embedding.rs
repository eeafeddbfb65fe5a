//! Projection of categorical and numerical fields into a shared `d`-dimensional space.
//!
//! Categorical field `j` owns a table of `vocab + 1` rows (the last row is the
//! out-of-vocabulary slot); numerical fields share a basis matrix with one row
//! per numerical field. A sample becomes a `[T, n1, d]` tensor with fields in
//! schema order.

use rand::Rng;

use crate::data::{Encoded, EncodedSample, Schema};
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingParams {
    /// One table per schema field; `None` for numerical fields.
    pub tables: Vec<Option<ParamId>>,
    /// `[k_num, d]`, absent when the schema has no numerical field.
    pub basis: Option<ParamId>,
    pub dim: usize,
}

impl EmbeddingParams {
    /// Registers tables and basis, drawn i.i.d. from Uniform(-1/sqrt(d), 1/sqrt(d)).
    pub fn init<S: Scalar, R: Rng>(store: &mut ParamStore<S>, schema: &Schema, dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let draw = |shape: [usize; 2], rng: &mut R| {
            Tensor::from_fn(shape, |_| S::of(rng.gen_range(-bound..bound)))
        };
        let tables = schema
            .fields
            .iter()
            .map(|f| {
                f.kind.is_categorical().then(|| {
                    let t = draw([f.vocab.len() + 1, dim], rng);
                    store.add(format!("embed.table.{}", f.name), t)
                })
            })
            .collect();
        let k_num = schema.numerical_count();
        let basis = (k_num > 0).then(|| {
            let t = draw([k_num, dim], rng);
            store.add("embed.basis", t)
        });
        Self { tables, basis, dim }
    }
}

/// Row lookup for an index, probability-weighted row sum for a distribution.
/// Returns a `[d]` vector.
pub fn embed_categorical<S: Scalar>(tape: &mut Tape<'_, S>, value: &Encoded, table: Var) -> Result<Var> {
    let (rows, d) = tape.value(table).dims2("embed_categorical")?;
    match value {
        Encoded::Index(i) => {
            if *i >= rows {
                return Err(Error::Range(format!("category index {i} >= {rows} table rows")));
            }
            tape.index0(table, *i)
        }
        Encoded::Distribution(w) => {
            if w.len() > rows || w.len() + 1 < rows {
                return Err(Error::Range(format!(
                    "distribution of length {} for a table of {rows} rows",
                    w.len()
                )));
            }
            let mut weights = vec![S::zero(); rows];
            for (dst, &p) in weights.iter_mut().zip(w) {
                *dst = S::of(p);
            }
            let wv = tape.constant(Tensor::new([1, rows], weights)?);
            let e = tape.matmul(wv, table)?;
            tape.reshape(e, [d])
        }
        Encoded::Number(_) => Err(Error::Contract("numerical value given to a categorical table".into())),
    }
}

/// `x * b` for a basis row `b`.
pub fn embed_numerical<S: Scalar>(tape: &mut Tape<'_, S>, x: S, basis_row: Var) -> Var {
    tape.scale(basis_row, x)
}

/// Embeds every step of `sample`, giving `[T, n1, d]`.
pub fn embed_sample<'p, S: Scalar>(
    tape: &mut Tape<'p, S>,
    sample: &EncodedSample,
    schema: &Schema,
    params: &EmbeddingParams,
    store: &'p ParamStore<S>,
) -> Result<Var> {
    let n1 = schema.len();
    let d = params.dim;
    let family = schema.family_positions();
    let tables: Vec<Option<Var>> = params.tables.iter().map(|t| t.map(|id| tape.param(store, id))).collect();
    let basis = params.basis.map(|id| tape.param(store, id));
    let all_numeric = params.tables.iter().all(Option::is_none);

    let mut steps = Vec::with_capacity(sample.time_span());
    for (t, step) in sample.steps.iter().enumerate() {
        if step.len() != n1 {
            return Err(Error::dim(
                "embed_sample",
                format!("step {t} has {} fields, schema has {n1}", step.len()),
            ));
        }
        if all_numeric {
            let xs = step
                .iter()
                .map(|v| match v {
                    Encoded::Number(x) => Ok(S::of(*x)),
                    other => Err(Error::SchemaMismatch(format!("expected a number, got {other:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let xs = tape.constant(Tensor::vector(xs));
            let b = basis.ok_or_else(|| Error::Contract("no numerical basis".into()))?;
            steps.push(tape.scale_channels(b, xs)?);
            continue;
        }
        let mut rows = Vec::with_capacity(n1);
        for (j, value) in step.iter().enumerate() {
            let row = match (tables[j], value) {
                (Some(table), v) => embed_categorical(tape, v, table)?,
                (None, Encoded::Number(x)) => {
                    let b = basis.ok_or_else(|| Error::Contract("no numerical basis".into()))?;
                    let row = tape.index0(b, family[j])?;
                    embed_numerical(tape, S::of(*x), row)
                }
                (None, other) => {
                    return Err(Error::SchemaMismatch(format!(
                        "field `{}` expects a number, got {other:?}",
                        schema.fields[j].name
                    )))
                }
            };
            rows.push(row);
        }
        let m = tape.stack(&rows)?;
        debug_assert_eq!(tape.shape(m), &[n1, d]);
        steps.push(m);
    }
    tape.stack(&steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(store: &mut ParamStore<f64>) -> ParamId {
        store.add("t", Tensor::from_f64([3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap())
    }

    #[test]
    fn lookup_and_weighted_rows() {
        let mut store = ParamStore::new();
        let id = table(&mut store);
        let mut tape = Tape::new();
        let t = tape.param(&store, id);
        let r1 = embed_categorical(&mut tape, &Encoded::Index(1), t).unwrap();
        assert_eq!(tape.value(r1).data(), &[3.0, 4.0]);
        let mix = embed_categorical(&mut tape, &Encoded::Distribution(vec![0.5, 0.5]), t).unwrap();
        assert_eq!(tape.value(mix).data(), &[2.0, 3.0]);
        let first = embed_categorical(&mut tape, &Encoded::Distribution(vec![1.0, 0.0]), t).unwrap();
        assert_eq!(tape.value(first).data(), &[1.0, 2.0]);
        let oov = embed_categorical(&mut tape, &Encoded::Index(2), t).unwrap();
        assert_eq!(tape.value(oov).data(), &[5.0, 6.0]);
    }

    #[test]
    fn index_past_oov_row_is_range_error() {
        let mut store = ParamStore::new();
        let id = table(&mut store);
        let mut tape = Tape::new();
        let t = tape.param(&store, id);
        assert!(matches!(
            embed_categorical(&mut tape, &Encoded::Index(3), t),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn numerical_scaling() {
        let mut tape = Tape::<f64>::new();
        let b = tape.constant(Tensor::from_f64([2], &[0.1, 0.2]).unwrap());
        let e = embed_numerical(&mut tape, 2.0, b);
        assert_eq!(tape.value(e).data(), &[0.2, 0.4]);
        let z = embed_numerical(&mut tape, 0.0, b);
        assert_eq!(tape.value(z).data(), &[0.0, 0.0]);
        let one = embed_numerical(&mut tape, 1.0, b);
        assert_eq!(tape.value(one).data(), &[0.1, 0.2]);
    }
}
