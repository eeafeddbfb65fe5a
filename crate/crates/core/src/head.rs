//! Sequence head: per-step flattening, GRU encoder, per-class sigmoid output,
//! and the generalized cross-entropy (L_q) loss.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Lower clamp applied to the true-class probability inside the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    /// Reset gate, `[h, h + input]`.
    pub w_r: ParamId,
    /// Update gate, `[h, h + input]`.
    pub w_z: ParamId,
    /// Candidate state, `[h, h + input]`.
    pub w_h: ParamId,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputParams {
    /// `[k, h]`
    pub w_fc: ParamId,
    pub classes: usize,
}

impl GruParams {
    /// Gate matrices drawn from Uniform(-1/sqrt(h + input), 1/sqrt(h + input)).
    pub fn init<S: Scalar, R: Rng>(store: &mut ParamStore<S>, hidden: usize, input: usize, rng: &mut R) -> Self {
        let fan = hidden + input;
        let bound = 1.0 / (fan as f64).sqrt();
        let mut draw = |name: &str, rng: &mut R| {
            store.add(
                name,
                Tensor::from_fn([hidden, fan], |_| S::of(rng.gen_range(-bound..bound))),
            )
        };
        let w_r = draw("gru.w_r", rng);
        let w_z = draw("gru.w_z", rng);
        let w_h = draw("gru.w_h", rng);
        Self { w_r, w_z, w_h, hidden }
    }
}

impl OutputParams {
    pub fn init<S: Scalar, R: Rng>(store: &mut ParamStore<S>, classes: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if classes < 2 {
            return Err(Error::config("k", format!("need at least 2 classes, got {classes}")));
        }
        let bound = 1.0 / (hidden as f64).sqrt();
        let w = Tensor::from_fn([classes, hidden], |_| S::of(rng.gen_range(-bound..bound)));
        Ok(Self {
            w_fc: store.add("out.w_fc", w),
            classes,
        })
    }
}

/// Flattens each step of `[T, N, d]` channel-major into an `[N * d]` vector.
pub fn time_concat<S: Scalar>(tape: &mut Tape<'_, S>, x: Var) -> Result<Vec<Var>> {
    let (t, n, d) = tape.value(x).dims3("time_concat")?;
    (0..t)
        .map(|i| {
            let step = tape.index0(x, i)?;
            tape.reshape(step, [n * d])
        })
        .collect()
}

fn matvec<S: Scalar>(tape: &mut Tape<'_, S>, w: Var, v: Var) -> Result<Var> {
    let n = tape.value(v).len();
    let col = tape.reshape(v, [n, 1])?;
    let out = tape.matmul(w, col)?;
    let rows = tape.shape(out)[0];
    tape.reshape(out, [rows])
}

/// Runs the GRU over `inputs` from `h0` and returns the last hidden state.
///
/// ```text
/// r = sigmoid(W_r [h, e])          reset gate
/// z = sigmoid(W_z [h, e])          update gate
/// c = tanh(W_h [r * h, e])
/// h' = z * c + (1 - z) * h
/// ```
pub fn gru_forward<S: Scalar>(
    tape: &mut Tape<'_, S>,
    inputs: &[Var],
    w_r: Var,
    w_z: Var,
    w_h: Var,
    h0: Var,
) -> Result<Var> {
    let mut h = h0;
    for &e in inputs {
        let he = tape.concat(&[h, e], 0)?;
        let r_pre = matvec(tape, w_r, he)?;
        let r = tape.sigmoid(r_pre);
        let z_pre = matvec(tape, w_z, he)?;
        let z = tape.sigmoid(z_pre);
        let rh = tape.hadamard(r, h)?;
        let rhe = tape.concat(&[rh, e], 0)?;
        let c_pre = matvec(tape, w_h, rhe)?;
        let c = tape.tanh(c_pre);
        // h' = h + z * (c - h)
        let diff = tape.sub(c, h)?;
        let step = tape.hadamard(z, diff)?;
        h = tape.add(h, step)?;
    }
    Ok(h)
}

/// Per-class scores `y = sigmoid(W_fc h)` and their normalized copy `r = y / sum(y)`.
pub fn predict<S: Scalar>(tape: &mut Tape<'_, S>, h: Var, w_fc: Var) -> Result<(Var, Var)> {
    let logits = matvec(tape, w_fc, h)?;
    let y = tape.sigmoid(logits);
    let total = tape.sum(y);
    let inv = tape.powf(total, -S::one());
    let r = tape.mul_scalar(y, inv)?;
    Ok((y, r))
}

pub fn validate_q(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::config("q", format!("{q} is not in (0, 1]")))
    }
}

/// `(1 - p^q) / q` with `p = r[label]` floored at [`PROB_FLOOR`].
pub fn lq_loss<S: Scalar>(tape: &mut Tape<'_, S>, r: Var, label: usize, q: f64) -> Result<Var> {
    validate_q(q)?;
    let k = tape.value(r).len();
    if label >= k {
        return Err(Error::Range(format!("label {label} for {k} classes")));
    }
    let p = tape.pick(r, label)?;
    let p = tape.clamp_min(p, S::of(PROB_FLOOR));
    let pq = tape.powf(p, S::of(q));
    let inv_q = S::of(1.0 / q);
    Ok(tape.affine(pq, -inv_q, inv_q))
}

/// Plain-value form of [`lq_loss`].
pub fn lq_value(p_true: f64, q: f64) -> Result<f64> {
    validate_q(q)?;
    let p = p_true.max(PROB_FLOOR);
    Ok((1.0 - p.powf(q)) / q)
}
