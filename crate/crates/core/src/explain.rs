//! Static and per-sample explanations.
//!
//! The static explanation walks the sparse selection matrices back to raw
//! fields: every path of retained entries from an output channel down to the
//! raw layer names a multiset of fields, and its weight is the product of the
//! absolute entries along the way. Per-sample explanations combine the two
//! attention score vectors with the predicted class score.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;

use crate::crossing::channel_origin;
use crate::error::{Error, Result};
use crate::model::DeepCross;
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::data::{EncodedSample, Schema};

/// Default magnitude below which a selection weight counts as zero.
pub const DEFAULT_EPSILON: f64 = 1e-4;
/// Default number of entries in an individual explanation.
pub const DEFAULT_TOP_K: usize = 10;

/// A weighted multiset of raw field indices, kept sorted.
pub type PatternWeights = BTreeMap<Vec<usize>, f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct CombinationPattern {
    pub rank: usize,
    /// Raw field indices, ascending, with multiplicity.
    pub indices: Vec<usize>,
    pub features: Vec<String>,
    /// Share of the rank's total path weight.
    pub weight: f64,
}

impl CombinationPattern {
    /// Field names comma-joined in field-index order.
    pub fn label(&self) -> String {
        self.features.join(",")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseEntry {
    pub input: usize,
    pub output: usize,
    pub weight: f64,
}

/// Entries of a `[c_in, c_out]` selection matrix with `|w| > epsilon`, row-major.
pub fn extract_nonzero<S: Scalar>(w: &Tensor<S>, epsilon: f64) -> Result<Vec<SparseEntry>> {
    if !(epsilon > 0.0) {
        return Err(Error::config("epsilon", format!("{epsilon} must be positive")));
    }
    let (_, c_out) = w.dims2("extract_nonzero")?;
    Ok(w.data()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.as_f64().abs() > epsilon)
        .map(|(i, v)| SparseEntry {
            input: i / c_out,
            output: i % c_out,
            weight: v.as_f64(),
        })
        .collect())
}

/// Path-weight distribution over field multisets for every output channel of
/// every rank, starting with the raw channels (`{k}: 1`).
///
/// `w_pcas[b]` is the `[n1 * n_prev, n_out]` selection matrix of rank `b + 2`.
pub fn channel_pattern_weights<S: Scalar>(
    w_pcas: &[&Tensor<S>],
    n_raw: usize,
    epsilon: f64,
) -> Result<Vec<Vec<PatternWeights>>> {
    let mut ranks: Vec<Vec<PatternWeights>> = vec![(0..n_raw).map(|k| PatternWeights::from([(vec![k], 1.0)])).collect()];
    for (b, w) in w_pcas.iter().enumerate() {
        let (c_in, c_out) = w.dims2("channel_pattern_weights")?;
        let prev = &ranks[b];
        if c_in != prev.len() * n_raw {
            return Err(Error::dim(
                "channel_pattern_weights",
                format!("block {b} has {c_in} inputs, expected {} x {n_raw}", prev.len()),
            ));
        }
        let mut out = vec![PatternWeights::new(); c_out];
        for e in extract_nonzero(w, epsilon)? {
            let (m, k) = channel_origin(e.input, n_raw);
            for (ms, pw) in &prev[m] {
                let mut grown = ms.clone();
                let at = grown.partition_point(|&x| x <= k);
                grown.insert(at, k);
                *out[e.output].entry(grown).or_insert(0.0) += pw * e.weight.abs();
            }
        }
        ranks.push(out);
    }
    Ok(ranks)
}

/// Rank-`r` patterns (`r >= 2`) from the selection matrices, normalized per rank.
pub fn backtrack_patterns<S: Scalar>(
    w_pcas: &[&Tensor<S>],
    names: &[&str],
    epsilon: f64,
) -> Result<Vec<CombinationPattern>> {
    let per_channel = channel_pattern_weights(w_pcas, names.len(), epsilon)?;
    let mut out = Vec::new();
    for (i, channels) in per_channel.iter().enumerate().skip(1) {
        let mut merged = PatternWeights::new();
        for ch in channels {
            for (ms, w) in ch {
                *merged.entry(ms.clone()).or_insert(0.0) += w;
            }
        }
        out.extend(normalized(i + 1, merged, names));
    }
    Ok(out)
}

/// Rank-1 patterns weighted by the given per-field scores, renormalized.
pub fn rank1_patterns(scores: &[f64], names: &[&str]) -> Vec<CombinationPattern> {
    let merged: PatternWeights = scores.iter().enumerate().map(|(k, &w)| (vec![k], w)).collect();
    normalized(1, merged, names)
}

fn normalized(rank: usize, merged: PatternWeights, names: &[&str]) -> Vec<CombinationPattern> {
    let total: f64 = merged.values().sum();
    if !(total > 0.0) {
        return Vec::new();
    }
    let mut pats: Vec<CombinationPattern> = merged
        .into_iter()
        .map(|(indices, w)| CombinationPattern {
            rank,
            features: indices.iter().map(|&k| names[k].to_string()).collect(),
            indices,
            weight: w / total,
        })
        .collect();
    pats.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.indices.cmp(&b.indices)));
    pats
}

/// Full static explanation of a trained model.
///
/// Rank-1 weights come from the feature attention scores of the raw channels,
/// averaged over `samples`.
pub fn static_explanation<S: Scalar>(
    model: &DeepCross<S>,
    samples: &[EncodedSample],
    epsilon: f64,
) -> Result<Vec<CombinationPattern>> {
    let names = model.schema.names();
    let n_raw = names.len();
    let mut mean_p = vec![0.0; n_raw];
    for s in samples {
        let pred = model.predict(s)?;
        for (acc, v) in mean_p.iter_mut().zip(&pred.p) {
            *acc += v;
        }
    }
    let mut out = rank1_patterns(&mean_p, &names);
    out.extend(backtrack_patterns(&model.pca_weights(), &names, epsilon)?);
    Ok(out)
}

/// Most heavily weighted field multiset of every channel of the concatenated
/// rank tensor; `None` when no retained path reaches the channel.
pub fn dominant_patterns<S: Scalar>(w_pcas: &[&Tensor<S>], n_raw: usize, epsilon: f64) -> Result<Vec<Option<Vec<usize>>>> {
    let per_channel = channel_pattern_weights(w_pcas, n_raw, epsilon)?;
    Ok(per_channel
        .into_iter()
        .flatten()
        .map(|ch| {
            ch.into_iter()
                .fold(None::<(Vec<usize>, f64)>, |best, (ms, w)| match best {
                    Some((_, bw)) if bw >= w => best,
                    _ => Some((ms, w)),
                })
                .map(|(ms, _)| ms)
        })
        .collect())
}

/// `E[t][i] = r_pred * q[t] * p[i]`.
pub fn explanation_matrix(p: &[f64], q: &[f64], r_pred: f64) -> Vec<Vec<f64>> {
    q.iter().map(|&qt| p.iter().map(|&pi| r_pred * qt * pi).collect()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplanationEntry {
    pub time: usize,
    pub channel: usize,
    pub pattern: Vec<String>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndividualExplanation {
    pub entity_id: String,
    pub predicted_class: usize,
    pub entries: Vec<ExplanationEntry>,
}

/// Top `k` cells of `E`, by descending score with ties going to the smaller
/// `(time, channel)`. `k` above `T * N` is clipped with a warning.
pub fn top_k(e: &[Vec<f64>], k: usize) -> Vec<(usize, usize, f64)> {
    let mut cells: Vec<(usize, usize, f64)> = e
        .iter()
        .enumerate()
        .flat_map(|(t, row)| row.iter().enumerate().map(move |(i, &v)| (t, i, v)))
        .collect();
    if k > cells.len() {
        warn!("top-K of {k} exceeds the {} available cells; clipping", cells.len());
    }
    cells.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    cells.truncate(k);
    cells
}

/// Individual explanation from retained scores. `patterns[i]` names channel `i`.
pub fn individual_explanation(
    p: &[f64],
    q: &[f64],
    r: &[f64],
    predicted_class: usize,
    k: usize,
    patterns: &[Vec<String>],
) -> Result<IndividualExplanation> {
    let Some(&r_pred) = r.get(predicted_class) else {
        return Err(Error::Range(format!("class {predicted_class} of {}", r.len())));
    };
    if patterns.len() != p.len() {
        return Err(Error::dim(
            "individual_explanation",
            format!("{} channel patterns for {} channels", patterns.len(), p.len()),
        ));
    }
    let e = explanation_matrix(p, q, r_pred);
    let entries = top_k(&e, k)
        .into_iter()
        .map(|(time, channel, score)| ExplanationEntry {
            time,
            channel,
            pattern: patterns[channel].clone(),
            score,
        })
        .collect();
    Ok(IndividualExplanation {
        entity_id: String::new(),
        predicted_class,
        entries,
    })
}

/// Channel labels for [`individual_explanation`], from dominant patterns.
pub fn channel_labels(dominant: &[Option<Vec<usize>>], schema: &Schema) -> Vec<Vec<String>> {
    dominant
        .iter()
        .map(|d| {
            d.as_deref()
                .unwrap_or(&[])
                .iter()
                .map(|&k| schema.fields[k].name.clone())
                .collect()
        })
        .collect()
}

/// Explains one sample with a trained model. Returns the explanation and `E`.
pub fn explain_sample<S: Scalar>(
    model: &DeepCross<S>,
    sample: &EncodedSample,
    k: usize,
    epsilon: f64,
) -> Result<(IndividualExplanation, Vec<Vec<f64>>)> {
    let pred = model.predict(sample)?;
    let dominant = dominant_patterns(&model.pca_weights(), model.n_raw(), epsilon)?;
    let labels = channel_labels(&dominant, &model.schema);
    let mut expl = individual_explanation(&pred.p, &pred.q, &pred.r, pred.class, k, &labels)?;
    expl.entity_id = sample.entity_id.clone();
    Ok((expl, explanation_matrix(&pred.p, &pred.q, pred.r[pred.class])))
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

pub fn patterns_csv(patterns: &[CombinationPattern]) -> String {
    let mut s = String::from("rank,pattern,weight\n");
    for p in patterns {
        let _ = writeln!(s, "{},{},{}", p.rank, quote(&p.label()), p.weight);
    }
    s
}

pub fn explanation_csv(expl: &IndividualExplanation) -> String {
    let mut s = String::from("time,channel,pattern,score\n");
    for e in &expl.entries {
        let _ = writeln!(s, "{},{},{},{}", e.time, e.channel, quote(&e.pattern.join(",")), e.score);
    }
    s
}

/// Cell size of the heatmap in SVG user units.
const CELL: usize = 16;

/// Grayscale `T x N` heatmap of `E` (rows are time steps). Values are
/// min-max normalized; a constant matrix maps to 1 (black).
pub fn heatmap_svg(e: &[Vec<f64>]) -> String {
    let t = e.len();
    let n = e.first().map_or(0, Vec::len);
    let (lo, hi) = e
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}">"#,
        n * CELL,
        t * CELL
    );
    for (ti, row) in e.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            let w = if hi > lo { (v - lo) / (hi - lo) } else { 1.0 };
            let g = (255.0 * (1.0 - w)).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="rgb({g},{g},{g})"/>"#,
                i * CELL,
                ti * CELL
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `patterns.csv` and, per explanation, `explain_<id>.csv` and
/// `heatmap_<id>.svg` into `dir`.
pub fn emit_reports(
    dir: impl AsRef<Path>,
    patterns: Option<&[CombinationPattern]>,
    explanations: &[(IndividualExplanation, Vec<Vec<f64>>)],
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if let Some(p) = patterns {
        write(&dir.join("patterns.csv"), &patterns_csv(p))?;
    }
    for (expl, e) in explanations {
        let id = &expl.entity_id;
        write(&dir.join(format!("explain_{id}.csv")), &explanation_csv(expl))?;
        write(&dir.join(format!("heatmap_{id}.svg")), &heatmap_svg(e))?;
    }
    Ok(())
}
