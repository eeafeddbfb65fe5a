//! Linear baselines: the Altman Z-Score rule and L1-penalized logistic
//! regression over time-flattened features.

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Encoded, EncodedSample, Schema};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::numerics::sigmoid;

pub const ALTMAN_COEFFICIENTS: [f64; 5] = [0.517, -0.460, 18.640, 0.388, 1.158];
pub const ALTMAN_THRESHOLD: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct ZScoreModel {
    pub coefficients: [f64; 5],
    pub threshold: f64,
}

impl Default for ZScoreModel {
    fn default() -> Self {
        Self {
            coefficients: ALTMAN_COEFFICIENTS,
            threshold: ALTMAN_THRESHOLD,
        }
    }
}

/// `(score, score > threshold)` for five indicator values.
pub fn zscore_rate(x: &[f64], model: &ZScoreModel) -> Result<(f64, bool)> {
    if x.len() != 5 {
        return Err(Error::dim("zscore_rate", format!("expected 5 indicators, got {}", x.len())));
    }
    let score: f64 = model.coefficients.iter().zip(x).map(|(c, v)| c * v).sum();
    Ok((score, score > model.threshold))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrConfig {
    pub l1: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Stop once the epoch loss improves by less than this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            l1: 1e-3,
            lr: 0.01,
            epochs: 200,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

pub fn lr_predict(x: &[f64], model: &LrModel) -> Result<f64> {
    if x.len() != model.weights.len() {
        return Err(Error::dim(
            "lr_predict",
            format!("{} inputs for {} weights", x.len(), model.weights.len()),
        ));
    }
    let z: f64 = model.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + model.bias;
    Ok(sigmoid(z))
}

/// Minimizes mean logistic loss plus `l1 * |w|_1` by per-sample SGD.
///
/// The penalty step is truncated at zero: a weight the shrinkage would push
/// across the origin is set to zero instead. The bias is not penalized.
pub fn lr_train(x: &[Vec<f64>], y: &[bool], config: &LrConfig) -> Result<LrModel> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::dim("lr_train", format!("{} rows, {} labels", x.len(), y.len())));
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::Contract("logistic regression needs both classes".into()));
    }
    let m = x[0].len();
    if x.iter().any(|r| r.len() != m) {
        return Err(Error::dim("lr_train", "ragged feature rows"));
    }
    let mut model = LrModel {
        weights: vec![0.0; m],
        bias: 0.0,
        l1: config.l1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let shrink = config.lr * config.l1;
    let mut prev_loss = f64::INFINITY;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let p = lr_predict(&x[i], &model)?;
            let g = p - f64::from(u8::from(y[i]));
            for (w, v) in model.weights.iter_mut().zip(&x[i]) {
                *w -= config.lr * g * v;
                *w = if *w > 0.0 { (*w - shrink).max(0.0) } else { (*w + shrink).min(0.0) };
            }
            model.bias -= config.lr * g;
        }
        let loss = lr_objective(x, y, &model)?;
        debug!("lr epoch {epoch}: objective {loss:.6}");
        if (prev_loss - loss).abs() < config.tolerance {
            break;
        }
        prev_loss = loss;
    }
    Ok(model)
}

fn lr_objective(x: &[Vec<f64>], y: &[bool], model: &LrModel) -> Result<f64> {
    let mut total = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let p = lr_predict(row, model)?.clamp(1e-15, 1.0 - 1e-15);
        total -= if label { p.ln() } else { (1.0 - p).ln() };
    }
    let l1: f64 = model.weights.iter().map(|w| w.abs()).sum();
    Ok(total / x.len() as f64 + model.l1 * l1)
}

/// Concatenates every step of a normalized sample: numerical fields give one
/// value, categorical fields a one-hot (or weight) vector over vocab + OOV.
pub fn flatten(sample: &EncodedSample, schema: &Schema) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for step in &sample.steps {
        if step.len() != schema.len() {
            return Err(Error::dim("flatten", format!("{} cells for {} fields", step.len(), schema.len())));
        }
        for (cell, field) in step.iter().zip(&schema.fields) {
            let width = field.vocab.len() + 1;
            match cell {
                Encoded::Number(v) => out.push(*v),
                Encoded::Index(i) => {
                    let at = out.len();
                    out.resize(at + width, 0.0);
                    out[at + (*i).min(width - 1)] = 1.0;
                }
                Encoded::Distribution(d) => {
                    if d.len() != width {
                        return Err(Error::dim("flatten", format!("{} weights for vocab {width}", d.len())));
                    }
                    out.extend_from_slice(d);
                }
            }
        }
    }
    Ok(out)
}

/// Trains the logistic baseline on `train` and scores `test`. Class
/// `positive` is the positive label; the rest are negative.
pub fn lr_evaluate(
    train: &[EncodedSample],
    test: &[EncodedSample],
    schema: &Schema,
    positive: usize,
    config: &LrConfig,
) -> Result<(LrModel, EvalReport)> {
    let xs = |set: &[EncodedSample]| set.iter().map(|s| flatten(s, schema)).collect::<Result<Vec<_>>>();
    let ys = |set: &[EncodedSample]| set.iter().map(|s| s.label == positive).collect::<Vec<_>>();
    let model = lr_train(&xs(train)?, &ys(train), config)?;
    let scores = xs(test)?
        .iter()
        .map(|x| lr_predict(x, &model))
        .collect::<Result<Vec<_>>>()?;
    let predicted: Vec<bool> = scores.iter().map(|&p| p > 0.5).collect();
    let report = EvalReport::from_predictions(&predicted, &ys(test), &scores)?;
    Ok((model, report))
}
