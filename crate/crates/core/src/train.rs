//! Minibatch SGD training and evaluation.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{EncodedSample, Schema};
use crate::error::{Error, Result};
use crate::head::validate_q;
use crate::metrics::EvalReport;
use crate::model::{argmax, DeepCross, ModelConfig};
use crate::numerics::{grad_check, sgd_step, GradCheckReport, Tape};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Loss shape in `(0, 1]`.
    pub q: f64,
    /// Lasso strength on the selection matrices.
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            q: 0.5,
            lambda: 1e-3,
            lr: 1e-3,
            epochs: 50,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        validate_q(self.q)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and nonnegative"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be finite and nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean objective over the epoch's minibatches, weighted by batch size.
    pub mean_loss: f64,
    /// Accuracy of the predictions made while computing each minibatch loss.
    pub train_acc: f64,
}

pub fn trace_csv(trace: &[EpochStats]) -> String {
    let mut s = String::from("epoch,mean_loss,train_acc\n");
    for e in trace {
        s.push_str(&format!("{},{},{}\n", e.epoch, e.mean_loss, e.train_acc));
    }
    s
}

pub struct TrainOutcome<S: Scalar = f64> {
    pub model: DeepCross<S>,
    pub trace: Vec<EpochStats>,
}

/// Trains a fresh network on `train`. Initialization uses `config.seed`; the
/// per-epoch shuffles use an independent stream derived from it.
pub fn train<S: Scalar>(train: &[EncodedSample], schema: &Schema, config: &TrainConfig) -> Result<TrainOutcome<S>> {
    config.validate()?;
    let model = DeepCross::new(schema.clone(), config.model.clone(), config.seed)?;
    train_model(model, train, config)
}

/// Continues training an existing network.
pub fn train_model<S: Scalar>(
    mut model: DeepCross<S>,
    train: &[EncodedSample],
    config: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let lr = S::of(config.lr);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&EncodedSample> = chunk.iter().map(|&i| &train[i]).collect();
            model.store.zero_grads();
            let (loss, hits, grads) = {
                let mut tape = Tape::new();
                let (loss, outputs) = model.objective_with_scores(&mut tape, &batch, config.q, config.lambda)?;
                let value = tape.value(loss).item()?.as_f64();
                let hits = outputs
                    .iter()
                    .zip(&batch)
                    .filter(|(r, s)| argmax(&tape.value(**r).to_f64_vec()) == s.label)
                    .count();
                (value, hits, tape.backward(loss)?)
            };
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("objective became {loss}"),
                });
            }
            model.store.accumulate(&grads)?;
            sgd_step(&mut model.store, lr);
            loss_sum += loss * batch.len() as f64;
            correct += hits;
        }
        if !model.store.all_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "non-finite parameter after update".into(),
            });
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
        };
        debug!("epoch {epoch}: loss {:.6} acc {:.4}", stats.mean_loss, stats.train_acc);
        trace.push(stats);
    }
    if let Some(last) = trace.last() {
        info!(
            "trained {} epochs, final loss {:.6}, train acc {:.4}",
            trace.len(),
            last.mean_loss,
            last.train_acc
        );
    }
    Ok(TrainOutcome { model, trace })
}

/// Scores `samples` and compares them with their labels. The positive class is
/// the highest class index `k - 1`; AUC uses its normalized score.
pub fn evaluate<S: Scalar>(model: &DeepCross<S>, samples: &[EncodedSample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Undefined("evaluation over zero samples".into()));
    }
    let positive = model.config.classes - 1;
    let preds = predict_all(model, samples)?;
    let predicted: Vec<bool> = preds.iter().map(|p| p.class == positive).collect();
    let actual: Vec<bool> = samples.iter().map(|s| s.label == positive).collect();
    let scores: Vec<f64> = preds.iter().map(|p| p.r[positive]).collect();
    EvalReport::from_predictions(&predicted, &actual, &scores)
}

/// Predicts every sample, fanning out over threads; results keep input order.
pub fn predict_all<S: Scalar>(model: &DeepCross<S>, samples: &[EncodedSample]) -> Result<Vec<crate::model::Prediction>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    let chunk = samples.len().div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|s| model.predict(s)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(samples.len());
        for h in handles {
            out.extend(h.join().expect("prediction thread panicked")?);
        }
        Ok(out)
    })
}

/// Checks tape gradients of the training objective over `batch` against
/// central differences, for every trainable parameter of `model`.
pub fn model_grad_check(
    model: &mut DeepCross<f64>,
    batch: &[EncodedSample],
    q: f64,
    lambda: f64,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let refs: Vec<&EncodedSample> = batch.iter().collect();
    let frame = model.clone();
    grad_check(
        &mut model.store,
        |tape, store| frame.objective_with(tape, store, &refs, q, lambda).map(|(loss, _)| loss),
        step,
        tol,
    )
}
