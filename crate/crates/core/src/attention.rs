//! Feature attention over the channels of the multi-rank tensor and temporal
//! attention over its time steps. Both return the softmax score vector they
//! used, which the explanation code consumes.

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureAttentionParams {
    /// `[N, T, d]`
    pub w_feat: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalAttentionParams {
    /// `[s, N, d]`
    pub w_s: ParamId,
    /// Odd window width.
    pub window: usize,
}

/// Checks that a temporal window is odd and fits the sequence.
pub fn validate_window(window: usize, time_span: usize) -> Result<()> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::config("s", format!("window width {window} must be odd")));
    }
    if window > time_span {
        return Err(Error::config("s", format!("window width {window} exceeds T = {time_span}")));
    }
    Ok(())
}

impl FeatureAttentionParams {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, n: usize, t: usize, d: usize) -> Self {
        Self {
            w_feat: store.add("attn.w_feat", Tensor::zeros([n, t, d])),
        }
    }
}

impl TemporalAttentionParams {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, window: usize, n: usize, t: usize, d: usize) -> Result<Self> {
        validate_window(window, t)?;
        Ok(Self {
            w_s: store.add("attn.w_s", Tensor::zeros([window, n, d])),
            window,
        })
    }
}

/// Scores channel `i` by `<x[:, i, :], w_feat[i]>`, softmaxes the scores into
/// `p`, and returns `relu((1 + p_i) * x[:, i, :])` together with `p`.
pub fn feature_attention<S: Scalar>(tape: &mut Tape<'_, S>, x: Var, w_feat: Var) -> Result<(Var, Var)> {
    let (t, n, d) = tape.value(x).dims3("feature_attention")?;
    if tape.shape(w_feat) != [n, t, d] {
        return Err(Error::dim(
            "feature_attention",
            format!("weights {:?} for input [{t}, {n}, {d}]", tape.shape(w_feat)),
        ));
    }
    let by_channel = tape.permute01(x)?;
    let prod = tape.hadamard(by_channel, w_feat)?;
    let flat = tape.reshape(prod, [n, t * d])?;
    let scores = tape.row_sum(flat)?;
    let p = tape.softmax(scores)?;
    let gain = tape.affine(p, S::one(), S::one());
    let scaled = tape.scale_channels(x, gain)?;
    Ok((tape.relu(scaled), p))
}

/// Scores step `t` by `<window(t), w_s>`, where `window(t)` is the `s` steps
/// centred on `t` with zero padding past either end, softmaxes the scores into
/// `q`, and returns `relu((1 + q_t) * x[t])` together with `q`.
pub fn temporal_attention<S: Scalar>(
    tape: &mut Tape<'_, S>,
    x: Var,
    w_s: Var,
    window: usize,
) -> Result<(Var, Var)> {
    let (t, n, d) = tape.value(x).dims3("temporal_attention")?;
    validate_window(window, t)?;
    if tape.shape(w_s) != [window, n, d] {
        return Err(Error::dim(
            "temporal_attention",
            format!("weights {:?} for window {window} over [{t}, {n}, {d}]", tape.shape(w_s)),
        ));
    }
    // g[tau, j] = <x[tau], w_s[j]>; score_t = sum_j g[t - half + j, j]
    let xf = tape.reshape(x, [t, n * d])?;
    let wf = tape.reshape(w_s, [window, n * d])?;
    let wt = tape.transpose(wf)?;
    let g = tape.matmul(xf, wt)?;
    let gv = tape.reshape(g, [t * window, 1])?;
    let half = window / 2;
    let mut gather = Tensor::<S>::zeros([t, t * window]);
    for step in 0..t {
        for j in 0..window {
            let Some(tau) = (step + j).checked_sub(half).filter(|&tau| tau < t) else {
                continue;
            };
            gather.set(&[step, tau * window + j], S::one());
        }
    }
    let gather = tape.constant(gather);
    let scores = tape.matmul(gather, gv)?;
    let scores = tape.reshape(scores, [t])?;
    let q = tape.softmax(scores)?;
    let gain = tape.affine(q, S::one(), S::one());
    let scaled = tape.scale_channels(xf, gain)?;
    let out = tape.relu(scaled);
    Ok((tape.reshape(out, [t, n, d])?, q))
}

/// Indices of the steps in the window centred on `step`; `None` marks padding.
pub fn window_steps(step: usize, window: usize, time_span: usize) -> Vec<Option<usize>> {
    let half = window / 2;
    (0..window)
        .map(|j| (step + j).checked_sub(half).filter(|&tau| tau < time_span))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(t: usize, n: usize, d: usize) -> Tensor<f64> {
        Tensor::from_fn([t, n, d], |i| ((i * 7 % 11) as f64 - 5.0) / 3.0)
    }

    #[test]
    fn zero_weights_give_uniform_scores_and_residual_output() {
        let (t, n, d) = (3, 4, 2);
        let mut tape = Tape::new();
        let x = tape.constant(input(t, n, d));
        let wf = tape.constant(Tensor::zeros([n, t, d]));
        let (y, p) = feature_attention(&mut tape, x, wf).unwrap();
        assert!(tape.value(p).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let expect = tape.value(x).map(|v| (1.25 * v).max(0.0));
        assert_eq!(tape.value(y), &expect);

        let ws = tape.constant(Tensor::zeros([3, n, d]));
        let (y, q) = temporal_attention(&mut tape, x, ws, 3).unwrap();
        assert!(tape.value(q).data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let expect = tape.value(x).map(|v| ((1.0 + 1.0 / 3.0) * v).max(0.0));
        assert_eq!(tape.value(y), &expect);
    }

    #[test]
    fn single_channel_has_unit_score() {
        let mut tape = Tape::new();
        let x = tape.constant(input(2, 1, 3));
        let wf = tape.constant(Tensor::full([1, 2, 3], 0.7));
        let (_, p) = feature_attention(&mut tape, x, wf).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0]);
    }

    #[test]
    fn window_padding_rule() {
        assert_eq!(window_steps(0, 3, 3), vec![None, Some(0), Some(1)]);
        assert_eq!(window_steps(2, 3, 3), vec![Some(1), Some(2), None]);
        assert_eq!(window_steps(1, 1, 3), vec![Some(1)]);
    }

    #[test]
    fn window_score_matches_explicit_sum() {
        let (t, n, d, s) = (4, 2, 2, 3);
        let xt = input(t, n, d);
        let wt = Tensor::from_fn([s, n, d], |i| (i as f64 * 0.37).sin());
        let mut tape = Tape::new();
        let x = tape.constant(xt.clone());
        let w = tape.constant(wt.clone());
        let (_, q) = temporal_attention(&mut tape, x, w, s).unwrap();
        let mut scores = vec![0.0; t];
        for (step, score) in scores.iter_mut().enumerate() {
            for (j, tau) in window_steps(step, s, t).into_iter().enumerate() {
                let Some(tau) = tau else { continue };
                for a in 0..n {
                    for b in 0..d {
                        *score += xt.at(&[tau, a, b]) * wt.at(&[j, a, b]);
                    }
                }
            }
        }
        let m = scores.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = scores.iter().map(|v| (v - m).exp()).sum();
        for (i, v) in tape.value(q).data().iter().enumerate() {
            assert!((v - (scores[i] - m).exp() / z).abs() < 1e-14);
        }
    }

    #[test]
    fn bad_windows_rejected() {
        assert!(validate_window(2, 5).is_err());
        assert!(validate_window(5, 3).is_err());
        assert!(validate_window(1, 1).is_ok());
    }
}
