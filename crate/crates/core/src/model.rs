//! The assembled network: embedding, crossing stack, dual attention, GRU head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{feature_attention, temporal_attention, validate_window, FeatureAttentionParams, TemporalAttentionParams};
use crate::crossing::{init_blocks, lasso_penalty, run_stack, CrossingBlockParams};
use crate::data::{EncodedSample, Schema};
use crate::embedding::{embed_sample, EmbeddingParams};
use crate::error::{Error, Result};
use crate::head::{gru_forward, lq_loss, predict, time_concat, validate_q, GruParams, OutputParams};
use crate::numerics::{ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Architecture knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Time span `T`.
    pub time_span: usize,
    /// Embedding width `d`.
    pub dim: usize,
    /// Output widths `[n_2, .., n_l]` of the crossing blocks; empty means rank 1 only.
    pub rank_widths: Vec<usize>,
    /// Temporal attention window `s` (odd, at most `T`).
    pub window: usize,
    /// GRU hidden size `h`.
    pub hidden: usize,
    /// Number of rating classes `k`.
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            time_span: 5,
            dim: 8,
            rank_widths: vec![8, 4],
            window: 3,
            hidden: 32,
            classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("T", self.time_span),
            ("d", self.dim),
            ("h", self.hidden),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.rank_widths.contains(&0) {
            return Err(Error::config("rank_widths", "widths must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::config("k", "need at least 2 classes"));
        }
        validate_window(self.window, self.time_span)
    }

    /// Highest feature rank `l`.
    pub fn max_rank(&self) -> usize {
        self.rank_widths.len() + 1
    }

    /// Total channel count `N = n1 + sum(rank_widths)`.
    pub fn total_channels(&self, n_raw: usize) -> usize {
        n_raw + self.rank_widths.iter().sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embedding: EmbeddingParams,
    pub blocks: Vec<CrossingBlockParams>,
    pub feature: FeatureAttentionParams,
    pub temporal: TemporalAttentionParams,
    pub gru: GruParams,
    pub output: OutputParams,
}

/// A DeepCross network over a fitted schema.
#[derive(Clone, Debug)]
pub struct DeepCross<S: Scalar = f64> {
    pub config: ModelConfig,
    pub schema: Schema,
    pub store: ParamStore<S>,
    pub params: ModelParams,
}

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub raw: Var,
    pub ranks: Vec<Var>,
    pub attentions: Vec<Var>,
    pub concat: Var,
    /// Feature attention scores, `[N]`.
    pub p: Var,
    /// Temporal attention scores, `[T]`.
    pub q: Var,
    pub hidden: Var,
    /// Per-class sigmoid scores.
    pub y: Var,
    /// Normalized scores.
    pub r: Var,
}

/// Plain values of one forward pass.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub y: Vec<f64>,
    pub r: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub class: usize,
}

/// Values of every crossing rank and attention matrix for one sample.
#[derive(Clone, Debug)]
pub struct RankStack<S: Scalar = f64> {
    /// `X^(1) .. X^(l)`
    pub ranks: Vec<Tensor<S>>,
    /// `A^(2) .. A^(l)`
    pub attentions: Vec<Tensor<S>>,
    /// Concatenation of all ranks, `[T, N, d]`.
    pub concat: Tensor<S>,
}

impl<S: Scalar> DeepCross<S> {
    /// Builds a freshly initialized network; `seed` drives every random draw.
    pub fn new(schema: Schema, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if schema.is_empty() {
            return Err(Error::Contract("schema has no fields".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let n_raw = schema.len();
        let n_total = config.total_channels(n_raw);
        let (t, d) = (config.time_span, config.dim);
        let embedding = EmbeddingParams::init(&mut store, &schema, d, &mut rng);
        let blocks = init_blocks(&mut store, n_raw, &config.rank_widths, t, &mut rng);
        let feature = FeatureAttentionParams::init(&mut store, n_total, t, d);
        let temporal = TemporalAttentionParams::init(&mut store, config.window, n_total, t, d)?;
        let gru = GruParams::init(&mut store, config.hidden, n_total * d, &mut rng);
        let output = OutputParams::init(&mut store, config.classes, config.hidden, &mut rng)?;
        Ok(Self {
            config,
            schema,
            store,
            params: ModelParams {
                embedding,
                blocks,
                feature,
                temporal,
                gru,
                output,
            },
        })
    }

    pub fn n_raw(&self) -> usize {
        self.schema.len()
    }

    pub fn total_channels(&self) -> usize {
        self.config.total_channels(self.n_raw())
    }

    /// Records the full forward pass of `sample` on `tape`.
    pub fn forward<'p>(&'p self, tape: &mut Tape<'p, S>, sample: &EncodedSample) -> Result<ForwardVars> {
        self.forward_with(tape, &self.store, sample)
    }

    /// [`forward`](Self::forward) reading parameter values from `store`, which
    /// must share this model's layout.
    pub fn forward_with<'p>(
        &self,
        tape: &mut Tape<'p, S>,
        store: &'p ParamStore<S>,
        sample: &EncodedSample,
    ) -> Result<ForwardVars> {
        if sample.time_span() != self.config.time_span {
            return Err(Error::dim(
                "forward",
                format!("sample has {} steps, model expects {}", sample.time_span(), self.config.time_span),
            ));
        }
        let p = &self.params;
        let raw = embed_sample(tape, sample, &self.schema, &p.embedding, store)?;
        let stack = run_stack(tape, raw, &p.blocks, store)?;
        let w_feat = tape.param(store, p.feature.w_feat);
        let (feat_out, p_scores) = feature_attention(tape, stack.concat, w_feat)?;
        let w_s = tape.param(store, p.temporal.w_s);
        let (temp_out, q_scores) = temporal_attention(tape, feat_out, w_s, p.temporal.window)?;
        let steps = time_concat(tape, temp_out)?;
        let w_r = tape.param(store, p.gru.w_r);
        let w_z = tape.param(store, p.gru.w_z);
        let w_h = tape.param(store, p.gru.w_h);
        let h0 = tape.constant(Tensor::zeros([p.gru.hidden]));
        let hidden = gru_forward(tape, &steps, w_r, w_z, w_h, h0)?;
        let w_fc = tape.param(store, p.output.w_fc);
        let (y, r) = predict(tape, hidden, w_fc)?;
        Ok(ForwardVars {
            raw,
            ranks: stack.ranks,
            attentions: stack.attentions,
            concat: stack.concat,
            p: p_scores,
            q: q_scores,
            hidden,
            y,
            r,
        })
    }

    pub fn predict(&self, sample: &EncodedSample) -> Result<Prediction> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, sample)?;
        let vals = |v: Var| tape.value(v).to_f64_vec();
        let y = vals(f.y);
        let class = argmax(&y);
        Ok(Prediction {
            r: vals(f.r),
            p: vals(f.p),
            q: vals(f.q),
            y,
            class,
        })
    }

    /// Values of every crossing rank for `sample`.
    pub fn rank_stack(&self, sample: &EncodedSample) -> Result<RankStack<S>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, sample)?;
        Ok(RankStack {
            ranks: f.ranks.iter().map(|&v| tape.value(v).clone()).collect(),
            attentions: f.attentions.iter().map(|&v| tape.value(v).clone()).collect(),
            concat: tape.value(f.concat).clone(),
        })
    }

    /// Records `mean_b L_q(sample_b) + lambda * lasso` and returns the loss handle.
    pub fn objective<'p>(
        &'p self,
        tape: &mut Tape<'p, S>,
        batch: &[&EncodedSample],
        q: f64,
        lambda: f64,
    ) -> Result<Var> {
        self.objective_with_scores(tape, batch, q, lambda).map(|(loss, _)| loss)
    }

    /// Like [`objective`](Self::objective), also returning each sample's
    /// normalized score handle `r`.
    pub fn objective_with_scores<'p>(
        &'p self,
        tape: &mut Tape<'p, S>,
        batch: &[&EncodedSample],
        q: f64,
        lambda: f64,
    ) -> Result<(Var, Vec<Var>)> {
        self.objective_with(tape, &self.store, batch, q, lambda)
    }

    /// [`objective_with_scores`](Self::objective_with_scores) reading
    /// parameter values from `store`.
    pub fn objective_with<'p>(
        &self,
        tape: &mut Tape<'p, S>,
        store: &'p ParamStore<S>,
        batch: &[&EncodedSample],
        q: f64,
        lambda: f64,
    ) -> Result<(Var, Vec<Var>)> {
        validate_q(q)?;
        if batch.is_empty() {
            return Err(Error::Contract("objective over an empty batch".into()));
        }
        let mut total: Option<Var> = None;
        let mut scores = Vec::with_capacity(batch.len());
        for sample in batch {
            let f = self.forward_with(tape, store, sample)?;
            let loss = lq_loss(tape, f.r, sample.label, q)?;
            scores.push(f.r);
            total = Some(match total {
                Some(t) => tape.add(t, loss)?,
                None => loss,
            });
        }
        let total = total.expect("batch is nonempty");
        let mean = tape.scale(total, S::of(1.0 / batch.len() as f64));
        if lambda == 0.0 {
            return Ok((mean, scores));
        }
        let ws: Vec<Var> = self
            .params
            .blocks
            .iter()
            .map(|b| tape.param(store, b.w_pca))
            .collect();
        let loss = match lasso_penalty(tape, &ws) {
            Some(pen) => {
                let pen = tape.scale(pen, S::of(lambda));
                tape.add(mean, pen)?
            }
            None => mean,
        };
        Ok((loss, scores))
    }

    /// Selection matrices of every block, in rank order.
    pub fn pca_weights(&self) -> Vec<&Tensor<S>> {
        self.params.blocks.iter().map(|b| self.store.value(b.w_pca)).collect()
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
