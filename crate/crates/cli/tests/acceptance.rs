//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
//! when a criterion fails. Criterion 10 needs the public stock dataset; without
//! it the line reads FAIL (blocked) and does not affect the exit status.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deepcross::baselines::{lr_evaluate, zscore_rate, LrConfig, ZScoreModel};
use deepcross::data::{
    build_schema, gen_synthetic_interaction, load_csv, normalize_all, split, EncodedSample, FieldSpec, IngestConfig,
    Schema,
};
use deepcross::explain::{backtrack_patterns, explanation_matrix, top_k};
use deepcross::head::lq_value;
use deepcross::metrics::auc;
use deepcross::model::ModelConfig;
use deepcross::numerics::{Tape, Tensor};
use deepcross::{evaluate, train, DeepCross64, EvalReport, TrainConfig};

const PUBLIC_DATA_VAR: &str = "DEEPCROSS_PUBLIC_DATA";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deepcross"));
    c.env("RUST_LOG", "warn");
    c
}

fn gradient_correctness() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, "fields = a, b, c\nT = 3\nd = 4\nrank_widths = 4\ns = 3\nh = 5\nk = 2\n").unwrap();
    let t0 = Instant::now();
    let out = bin()
        .args(["gradcheck", "--config", cfg.to_str().unwrap(), "--step", "1e-4", "--tol", "1e-3"])
        .output()
        .unwrap();
    let elapsed = t0.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let err: f64 = text
        .split("max relative error ")
        .nth(1)
        .and_then(|s| s.split(',').next())
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(f64::INFINITY);
    outcome(
        out.status.success() && err <= 1e-3 && elapsed <= Duration::from_secs(60),
        format!("max rel err {err:.3e} (<= 1e-3), {:.1}s (<= 60s)", elapsed.as_secs_f64()),
    )
}

struct Synthetic {
    schema: Schema,
    train: Vec<EncodedSample>,
    test: Vec<EncodedSample>,
}

fn synthetic() -> Synthetic {
    let raw = gen_synthetic_interaction(2000, 2, 2, 7).unwrap();
    let s = split(&raw, 0.7, 7).unwrap();
    let schema = build_schema(&s.train).unwrap().schema;
    Synthetic {
        train: normalize_all(&s.train, &schema).unwrap(),
        test: normalize_all(&s.test, &schema).unwrap(),
        schema,
    }
}

fn synthetic_config(lambda: f64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            time_span: 2,
            dim: 8,
            rank_widths: vec![8],
            window: 1,
            hidden: 32,
            classes: 2,
        },
        lambda,
        lr: 0.01,
        epochs: 200,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn fit(data: &Synthetic, lambda: f64) -> DeepCross64 {
    train::<f64>(&data.train, &data.schema, &synthetic_config(lambda)).unwrap().model
}

fn planted_interaction(data: &Synthetic, model: &DeepCross64, train_time: Duration) -> Outcome {
    let t0 = Instant::now();
    let acc = evaluate(model, &data.test).unwrap().acc;
    let lr_accs: Vec<f64> = (0..5)
        .map(|seed| {
            let cfg = LrConfig { seed, ..LrConfig::default() };
            lr_evaluate(&data.train, &data.test, &data.schema, 1, &cfg).unwrap().1.acc
        })
        .collect();
    let lr_max = lr_accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total = train_time + t0.elapsed();
    outcome(
        acc >= 0.90 && lr_max <= 0.62 && total <= Duration::from_secs(300),
        format!(
            "test acc {acc:.4} (>= 0.90), LR max acc over 5 seeds {lr_max:.4} (<= 0.62), {:.1}s (<= 300s)",
            total.as_secs_f64()
        ),
    )
}

fn lq_limits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut exact = true;
    for _ in 0..100 {
        let p: f64 = rng.gen_range(0.05..0.95);
        let ce = -p.ln();
        worst = worst.max((lq_value(p, 1e-3).unwrap() - ce).abs() / ce.abs());
        exact &= lq_value(p, 1.0).unwrap() == 1.0 - p;
    }
    outcome(
        worst <= 1e-2 && exact,
        format!("max rel gap to cross-entropy {worst:.3e} (<= 1e-2), q=1 equals 1-p exactly: {exact}"),
    )
}

fn sub_threshold_fraction(model: &DeepCross64) -> (usize, usize) {
    model.pca_weights().iter().fold((0, 0), |(below, total), w| {
        (below + w.data().iter().filter(|v| v.abs() < 1e-3).count(), total + w.len())
    })
}

fn lasso_sparsity(data: &Synthetic, mid: &DeepCross64) -> Outcome {
    let counts = [sub_threshold_fraction(&fit(data, 0.0)), sub_threshold_fraction(mid), sub_threshold_fraction(&fit(data, 1e-2))];
    let fr: Vec<f64> = counts.iter().map(|&(b, t)| b as f64 / t as f64).collect();
    outcome(
        fr[0] <= fr[1] && fr[1] <= fr[2] && counts[2].0 > counts[0].0,
        format!("sub-1e-3 fractions at lambda 0, 1e-3, 1e-2: {:.4}, {:.4}, {:.4}", fr[0], fr[1], fr[2]),
    )
}

fn paths(ws: &[Tensor<f64>], b: usize, out: usize, n1: usize, eps: f64) -> Vec<(Vec<usize>, f64)> {
    let w = &ws[b];
    let (c_in, c_out) = (w.shape()[0], w.shape()[1]);
    let mut all = Vec::new();
    for c in 0..c_in {
        let v = w.data()[c * c_out + out];
        if v.abs() <= eps {
            continue;
        }
        let below = if b == 0 { vec![(vec![c / n1], 1.0)] } else { paths(ws, b - 1, c / n1, n1, eps) };
        for (mut f, pw) in below {
            f.push(c % n1);
            all.push((f, pw * v.abs()));
        }
    }
    all
}

fn explanation_oracle() -> Outcome {
    let eps = 1e-4;
    let names = ["a", "b", "c", "d"];
    let mut worst = 0.0f64;
    let mut sets_equal = true;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n1 = rng.gen_range(2..=4);
        let n2 = rng.gen_range(1..=64 / (n1 * n1));
        let n3 = rng.gen_range(1..=64 / (n1 * n2));
        let mut mat = |r: usize, c: usize| {
            Tensor::from_fn([r, c], |_| if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(-1.0..1.0) })
        };
        let ws = vec![mat(n1 * n1, n2), mat(n1 * n2, n3)];
        let refs: Vec<&Tensor<f64>> = ws.iter().collect();
        let got = backtrack_patterns(&refs, &names[..n1], eps).unwrap();
        for b in 0..2 {
            let mut want: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
            for o in 0..ws[b].shape()[1] {
                for (mut f, w) in paths(&ws, b, o, n1, eps) {
                    f.sort_unstable();
                    *want.entry(f).or_default() += w;
                }
            }
            let total: f64 = want.values().sum();
            let have: BTreeMap<Vec<usize>, f64> =
                got.iter().filter(|p| p.rank == b + 2).map(|p| (p.indices.clone(), p.weight)).collect();
            sets_equal &= have.keys().eq(want.keys());
            for (k, w) in &want {
                worst = worst.max((have.get(k).copied().unwrap_or(f64::NAN) - w / total).abs());
            }
        }
    }
    outcome(
        sets_equal && worst <= 1e-9,
        format!("20 nets: multisets identical {sets_equal}, max weight gap {worst:.3e} (<= 1e-9)"),
    )
}

/// A randomly perturbed three-rank model and 50 samples to run it on.
fn random_model() -> (DeepCross64, Vec<EncodedSample>) {
    let raw = gen_synthetic_interaction(50, 3, 2, 11).unwrap();
    let schema = build_schema(&raw).unwrap().schema;
    let samples = normalize_all(&raw, &schema).unwrap();
    let config = ModelConfig {
        time_span: 3,
        dim: 4,
        rank_widths: vec![5, 5],
        window: 3,
        hidden: 6,
        classes: 2,
    };
    let mut model = DeepCross64::new(schema, config, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for p in model.store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
    (model, samples)
}

fn explanation_structure(model: &DeepCross64, samples: &[EncodedSample]) -> Outcome {
    let mut worst_minor = 0.0f64;
    let mut invariant = true;
    for s in samples {
        let pred = model.predict(s).unwrap();
        let r = pred.r[pred.class];
        let e = explanation_matrix(&pred.p, &pred.q, r);
        for a in 0..e.len() {
            for b in a + 1..e.len() {
                for i in 0..e[a].len() {
                    for j in i + 1..e[a].len() {
                        worst_minor = worst_minor.max((e[a][i] * e[b][j] - e[a][j] * e[b][i]).abs());
                    }
                }
            }
        }
        let cells = |scale: f64| {
            top_k(&explanation_matrix(&pred.p, &pred.q, r * scale), 10)
                .into_iter()
                .map(|(t, i, _)| (t, i))
                .collect::<Vec<_>>()
        };
        let base = cells(1.0);
        invariant &= [1e-3, 0.5, 7.0, 1e4].iter().all(|&c| cells(c) == base);
    }
    outcome(
        worst_minor <= 1e-9 && invariant,
        format!("50 samples: max 2x2 minor {worst_minor:.3e} (<= 1e-9), top-K invariant to rescaling: {invariant}"),
    )
}

fn attention_normalization(model: &DeepCross64, samples: &[EncodedSample]) -> Outcome {
    let mut worst = 0.0f64;
    let dev = |sum: f64| (sum - 1.0).abs();
    for s in samples {
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, s).unwrap();
        worst = worst.max(dev(tape.value(f.p).data().iter().sum()));
        worst = worst.max(dev(tape.value(f.q).data().iter().sum()));
        worst = worst.max(dev(tape.value(f.r).data().iter().sum()));
        for &a in &f.attentions {
            let t = tape.value(a);
            let (rows, cols) = (t.shape()[0], t.shape()[1]);
            for k in 0..cols {
                worst = worst.max(dev((0..rows).map(|m| t.data()[m * cols + k]).sum()));
            }
        }
    }
    outcome(worst <= 1e-9, format!("max |sum - 1| over p, q, r and crossing attention {worst:.3e} (<= 1e-9)"))
}

fn metrics_exactness() -> Outcome {
    let r = EvalReport::from_counts(3, 2, 1, 8, f64::NAN);
    let counts_ok = r.acc == 11.0 / 14.0 && r.err1 == 0.2 && r.err2 == 0.25;
    let fixtures = [
        (auc(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap(), 1.0),
        (auc(&[0.9, 0.4, 0.6, 0.2], &[true, false, false, true]).unwrap(), 0.5),
        (auc(&[0.3, 0.3, 0.3, 0.3], &[true, false, true, false]).unwrap(), 0.5),
    ];
    let auc_ok = fixtures.iter().all(|(got, want)| got == want);
    outcome(
        counts_ok && auc_ok,
        format!(
            "acc {:.6} (= 11/14 from the stated counts), err1 {}, err2 {}, AUC fixtures exact: {auc_ok}",
            r.acc, r.err1, r.err2
        ),
    )
}

fn zscore_fixture() -> Outcome {
    let (score, positive) = zscore_rate(&[1.0; 5], &ZScoreModel::default()).unwrap();
    outcome(
        (score - 20.243).abs() <= 1e-9 && positive,
        format!("all-ones score {score} (20.243 +- 1e-9), positive: {positive}"),
    )
}

/// Long-format CSV with `entity_id`, `period_index`, `label` and numeric
/// columns; the first 25 numeric columns are used.
fn public_data(path: &Path) -> Outcome {
    let t0 = Instant::now();
    let header = match fs::read_to_string(path) {
        Ok(text) => text.lines().next().unwrap_or("").to_string(),
        Err(e) => return outcome(false, format!("cannot read {}: {e}", path.display())),
    };
    let fields: Vec<FieldSpec> = header
        .split(',')
        .map(str::trim)
        .filter(|c| !["entity_id", "period_index", "label"].contains(c))
        .take(25)
        .map(FieldSpec::numerical)
        .collect();
    let ingest = IngestConfig {
        fields,
        label_column: "label".into(),
        time_span: 5,
    };
    let loaded = load_csv(path, &ingest).unwrap();
    let s = split(&loaded.samples, 0.7, 0).unwrap();
    let schema = build_schema(&s.train).unwrap().schema;
    let tr = normalize_all(&s.train, &schema).unwrap();
    let te = normalize_all(&s.test, &schema).unwrap();
    let cfg = TrainConfig {
        model: ModelConfig {
            time_span: 5,
            dim: 16,
            rank_widths: vec![16],
            window: 3,
            hidden: 32,
            classes: 2,
        },
        lr: 0.01,
        ..TrainConfig::default()
    };
    let model = train::<f64>(&tr, &schema, &cfg).unwrap().model;
    let ours = evaluate(&model, &te).unwrap().auc;
    let lr = lr_evaluate(&tr, &te, &schema, 1, &LrConfig::default()).unwrap().1.auc;
    let elapsed = t0.elapsed();
    outcome(
        ours >= lr - 0.02 && elapsed <= Duration::from_secs(1800),
        format!("test AUC {ours:.4} vs LR {lr:.4} (>= LR - 0.02), {:.0}s (<= 1800s)", elapsed.as_secs_f64()),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth.csv");
    let d = data.to_str().unwrap();
    assert!(bin().args(["synth", "--out", d, "--samples", "200", "--seed", "5"]).output().unwrap().status.success());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "fields = x1, x2, noise0, noise1\nT = 2\nd = 4\nrank_widths = 4, 4\nh = 8\nepochs = 3\nseed = 9\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let ok = bin()
            .args(["train", "--data", d, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .output()
            .unwrap()
            .status
            .success();
        ok.then(|| fs::read(&out).unwrap())
    };
    match (run("a.ckpt"), run("b.ckpt")) {
        (Some(a), Some(b)) => outcome(a == b, format!("two runs: {} and {} bytes, identical: {}", a.len(), b.len(), a == b)),
        _ => outcome(false, "train command failed"),
    }
}

fn main() {
    // `cargo test -- --list` and friends should not run the suite
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut lines: Vec<(u32, &str, Outcome, bool)> = Vec::new();
    lines.push((1, "gradient correctness", gradient_correctness(), true));

    let data = synthetic();
    let t0 = Instant::now();
    let model = fit(&data, 1e-3);
    let train_time = t0.elapsed();
    lines.push((2, "planted interaction", planted_interaction(&data, &model, train_time), true));
    lines.push((3, "L_q limits", lq_limits(), true));
    lines.push((4, "lasso sparsity", lasso_sparsity(&data, &model), true));
    lines.push((5, "explanation oracle", explanation_oracle(), true));
    let (rm, samples) = random_model();
    lines.push((6, "explanation structure", explanation_structure(&rm, &samples), true));
    lines.push((7, "attention normalization", attention_normalization(&rm, &samples), true));
    lines.push((8, "metrics exactness", metrics_exactness(), true));
    lines.push((9, "Z-Score fixture", zscore_fixture(), true));
    match std::env::var_os(PUBLIC_DATA_VAR) {
        Some(path) => lines.push((10, "public data", public_data(Path::new(&path)), true)),
        None => lines.push((
            10,
            "public data",
            outcome(false, format!("blocked: dataset not available offline; set {PUBLIC_DATA_VAR}")),
            false,
        )),
    }
    lines.push((11, "determinism", determinism(), true));

    let mut failed = 0;
    for (n, name, o, counts) in &lines {
        let tag = match (o.pass, counts) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (blocked)",
        };
        println!("[{tag}] criterion {n:>2} {name}: {}", o.detail);
        if !o.pass && *counts {
            failed += 1;
        }
    }
    println!("acceptance: {} of {} criteria passed", lines.iter().filter(|l| l.2.pass).count(), lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
