//! Attentive feature-crossing blocks and the multi-rank stack.
//!
//! A block of rank `i` crosses every rank-`(i-1)` channel `m` with every raw
//! channel `k` by elementwise product, reweights each pair with an attention
//! coefficient, and mixes the `n_{i-1} * n1` candidates down to `n_i` output
//! channels through an L1-penalized pointwise layer (the "PCA" layer).
//! Candidate channel `c` always originates from the pair `(c / n1, c % n1)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var, LEAKY_SLOPE};
use crate::scalar::Scalar;

/// Parameter handles of one crossing block.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossingBlockParams {
    /// Rank of the block's output features (>= 2).
    pub rank: usize,
    /// `[T]`
    pub w_query: ParamId,
    /// `[T]`
    pub w_key: ParamId,
    /// `[n1 * n_prev, n_out]`
    pub w_pca: ParamId,
    pub n_raw: usize,
    pub n_prev: usize,
    pub n_out: usize,
}

impl CrossingBlockParams {
    /// Candidate channel count `c_i = n1 * n_{i-1}`.
    pub fn c_in(&self) -> usize {
        self.n_raw * self.n_prev
    }
}

/// The `(m, k)` parent pair of candidate channel `c` for `n_raw` raw features.
#[inline]
pub fn channel_origin(c: usize, n_raw: usize) -> (usize, usize) {
    (c / n_raw, c % n_raw)
}

/// Registers blocks for ranks `2..=widths.len() + 1`.
///
/// Query/key weights start at `1/T` (a plain temporal average); selection
/// weights are drawn from Uniform(-1/sqrt(c_i), 1/sqrt(c_i)).
pub fn init_blocks<S: Scalar, R: Rng>(
    store: &mut ParamStore<S>,
    n_raw: usize,
    widths: &[usize],
    time_span: usize,
    rng: &mut R,
) -> Vec<CrossingBlockParams> {
    let mut n_prev = n_raw;
    widths
        .iter()
        .enumerate()
        .map(|(i, &n_out)| {
            let rank = i + 2;
            let c_in = n_raw * n_prev;
            let avg = S::of(1.0 / time_span as f64);
            let w_query = store.add(format!("cross.{rank}.w_query"), Tensor::full([time_span], avg));
            let w_key = store.add(format!("cross.{rank}.w_key"), Tensor::full([time_span], avg));
            let bound = 1.0 / (c_in as f64).sqrt();
            let w = Tensor::from_fn([c_in, n_out], |_| S::of(rng.gen_range(-bound..bound)));
            let w_pca = store.add(format!("cross.{rank}.w_pca"), w);
            let block = CrossingBlockParams {
                rank,
                w_query,
                w_key,
                w_pca,
                n_raw,
                n_prev,
                n_out,
            };
            n_prev = n_out;
            block
        })
        .collect()
}

/// `out[m, :] = sum_t w[t] * x[t, m, :]` for `x: [T, n, d]`, `w: [T]`.
pub fn temporal_aggregate<S: Scalar>(tape: &mut Tape<'_, S>, x: Var, w: Var) -> Result<Var> {
    let (t, n, d) = tape.value(x).dims3("temporal_aggregate")?;
    if tape.value(w).len() != t {
        return Err(Error::dim(
            "temporal_aggregate",
            format!("{} weights for {t} steps", tape.value(w).len()),
        ));
    }
    let flat = tape.reshape(x, [t, n * d])?;
    let row = tape.reshape(w, [1, t])?;
    let agg = tape.matmul(row, flat)?;
    tape.reshape(agg, [n, d])
}

/// Candidate channels `out[.., m * n1 + k, :] = prev[.., m, :] * raw[.., k, :]`.
///
/// Accepts one time step (`[n, d]`) or a whole sequence (`[T, n, d]`).
pub fn cross_product<S: Scalar>(tape: &mut Tape<'_, S>, raw: Var, prev: Var) -> Result<Var> {
    match (tape.shape(raw).len(), tape.shape(prev).len()) {
        (3, 3) => tape.cross_rows(prev, raw),
        (2, 2) => {
            let (k, d) = (tape.shape(raw)[0], tape.shape(raw)[1]);
            let (m, dp) = (tape.shape(prev)[0], tape.shape(prev)[1]);
            let r = tape.reshape(raw, [1, k, d])?;
            let p = tape.reshape(prev, [1, m, dp])?;
            let c = tape.cross_rows(p, r)?;
            tape.reshape(c, [m * k, d])
        }
        _ => Err(Error::dim(
            "cross_product",
            format!("{:?} vs {:?}", tape.shape(raw), tape.shape(prev)),
        )),
    }
}

/// Attention `a[m, k]` between rank-`(i-1)` feature `m` and raw feature `k`,
/// normalized over `m` for each `k`. Shape `[n_prev, n1]`.
pub fn cross_attention<S: Scalar>(
    tape: &mut Tape<'_, S>,
    raw: Var,
    prev: Var,
    w_query: Var,
    w_key: Var,
) -> Result<Var> {
    let query = temporal_aggregate(tape, prev, w_query)?;
    let key = temporal_aggregate(tape, raw, w_key)?;
    let key_t = tape.transpose(key)?;
    let logits = tape.matmul(query, key_t)?;
    // softmax runs along rows, so normalize the transpose
    let by_raw = tape.transpose(logits)?;
    let norm = tape.softmax(by_raw)?;
    tape.transpose(norm)
}

/// `leaky_relu((1 + a[m, k]) * x)` per candidate channel `m * n1 + k`.
pub fn residual_scale<S: Scalar>(tape: &mut Tape<'_, S>, crossed: Var, attention: Var) -> Result<Var> {
    let n = tape.value(attention).len();
    let flat = tape.reshape(attention, [n])?;
    let gain = tape.affine(flat, S::one(), S::one());
    let scaled = tape.scale_channels(crossed, gain)?;
    Ok(tape.leaky_relu(scaled, S::of(LEAKY_SLOPE)))
}

/// Pointwise channel mixing `out[t, o, :] = sum_c w[c, o] * x[t, c, :]`.
pub fn pca_select<S: Scalar>(tape: &mut Tape<'_, S>, crossed: Var, w_pca: Var) -> Result<Var> {
    tape.channel_mix(crossed, w_pca)
}

/// Entrywise absolute sum of all selection matrices; `None` for an empty stack.
pub fn lasso_penalty<S: Scalar>(tape: &mut Tape<'_, S>, w_pcas: &[Var]) -> Option<Var> {
    let mut total: Option<Var> = None;
    for &w in w_pcas {
        let a = tape.abs(w);
        let s = tape.sum(a);
        total = Some(match total {
            Some(t) => tape.add(t, s).expect("scalars add"),
            None => s,
        });
    }
    total
}

/// Tape handles of a forward pass through the stack.
#[derive(Clone, Debug)]
pub struct StackVars {
    /// `X^(1) .. X^(l)`, each `[T, n_i, d]`.
    pub ranks: Vec<Var>,
    /// `A^(2) .. A^(l)`, each `[n_{i-1}, n1]`.
    pub attentions: Vec<Var>,
    /// Ranks concatenated along the feature axis, `[T, N, d]`.
    pub concat: Var,
}

/// Runs all blocks over `raw` (`X^(1)`) and concatenates every rank.
pub fn run_stack<'p, S: Scalar>(
    tape: &mut Tape<'p, S>,
    raw: Var,
    blocks: &[CrossingBlockParams],
    store: &'p ParamStore<S>,
) -> Result<StackVars> {
    let (t, n_raw, _) = tape.value(raw).dims3("run_stack")?;
    let mut ranks = vec![raw];
    let mut attentions = Vec::with_capacity(blocks.len());
    let mut prev = raw;
    for (i, b) in blocks.iter().enumerate() {
        let n_prev = tape.shape(prev)[1];
        if b.rank != i + 2 || b.n_raw != n_raw || b.n_prev != n_prev {
            return Err(Error::dim(
                "run_stack",
                format!(
                    "block {} expects rank {}, n1={}, n_prev={}; stack has n1={n_raw}, n_prev={n_prev}",
                    i, b.rank, b.n_raw, b.n_prev
                ),
            ));
        }
        let wq = tape.param(store, b.w_query);
        let wk = tape.param(store, b.w_key);
        let wp = tape.param(store, b.w_pca);
        if tape.value(wq).len() != t || tape.shape(wp) != [b.c_in(), b.n_out] {
            return Err(Error::dim("run_stack", format!("rank {} parameters do not fit T={t}", b.rank)));
        }
        let a = cross_attention(tape, raw, prev, wq, wk)?;
        let crossed = cross_product(tape, raw, prev)?;
        let scaled = residual_scale(tape, crossed, a)?;
        let next = pca_select(tape, scaled, wp)?;
        attentions.push(a);
        ranks.push(next);
        prev = next;
    }
    let concat = if ranks.len() == 1 { raw } else { tape.concat(&ranks, 1)? };
    Ok(StackVars {
        ranks,
        attentions,
        concat,
    })
}
