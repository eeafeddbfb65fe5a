use std::sync::Arc;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FieldSpec, RawValue, SequencedSample};
use crate::error::{Error, Result};

/// Label of the planted interaction: 1 iff the two signal values share a sign.
pub fn interaction_label(x1: f64, x2: f64) -> usize {
    usize::from(x1 * x2 > 0.0)
}

/// Samples whose label is a pure second-rank interaction of fields `x1` and
/// `x2` at the final step. All values, including `noise_fields` extra fields
/// `noise0..`, are i.i.d. Uniform(-1, 1).
pub fn gen_synthetic_interaction(
    n_samples: usize,
    time_span: usize,
    noise_fields: usize,
    seed: u64,
) -> Result<Vec<SequencedSample>> {
    if n_samples == 0 || time_span == 0 {
        return Err(Error::Contract("synthetic data needs n_samples >= 1 and T >= 1".into()));
    }
    let mut specs = vec![FieldSpec::numerical("x1"), FieldSpec::numerical("x2")];
    specs.extend((0..noise_fields).map(|i| FieldSpec::numerical(format!("noise{i}"))));
    let fields = Arc::new(specs);
    let width = fields.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unif = Uniform::new(-1.0f64, 1.0);
    Ok((0..n_samples)
        .map(|i| {
            let steps: Vec<Vec<RawValue>> = (0..time_span)
                .map(|_| (0..width).map(|_| RawValue::number(unif.sample(&mut rng))).collect())
                .collect();
            let last = &steps[time_span - 1];
            let label = interaction_label(
                last[0].as_number().unwrap_or(0.0),
                last[1].as_number().unwrap_or(0.0),
            );
            SequencedSample {
                entity_id: format!("s{i:05}"),
                fields: Arc::clone(&fields),
                steps,
                label,
            }
        })
        .collect())
}
