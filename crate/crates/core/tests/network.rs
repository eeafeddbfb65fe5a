use deepcross::attention::{feature_attention, temporal_attention};
use deepcross::crossing::{init_blocks, run_stack, CrossingBlockParams};
use deepcross::data::{
    build_schema, gen_synthetic_interaction, normalize_all, Encoded, EncodedSample, FeatureField, FieldKind, Schema,
};
use deepcross::embedding::{embed_sample, EmbeddingParams};
use deepcross::head::{gru_forward, lq_value};
use deepcross::numerics::{grad_check, ParamStore, Tape, Tensor, LEAKY_SLOPE};
use deepcross::train::{model_grad_check, train_model};
use deepcross::{DeepCross, ModelConfig, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// Blocks for ranks 2..=l with identity selection and zero query/key weights.
fn identity_blocks(store: &mut ParamStore<f64>, n1: usize, t: usize, ranks: usize) -> Vec<CrossingBlockParams> {
    let mut widths = Vec::new();
    let mut n = n1;
    for _ in 1..ranks {
        n *= n1;
        widths.push(n);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let blocks = init_blocks(store, n1, &widths, t, &mut rng);
    for b in &blocks {
        store.get_mut(b.w_query).value.fill(0.0);
        store.get_mut(b.w_key).value.fill(0.0);
        store.get_mut(b.w_pca).value = Tensor::identity(b.c_in());
    }
    blocks
}

/// Value of the rank-`len` identity-stack channel built from `tuple` of raw
/// feature indices, computed straight from the definition.
fn hadamard_path(raw: &Tensor<f64>, t: usize, tuple: &[usize], n1: usize, dd: usize) -> f64 {
    let mut v = raw.at(&[t, tuple[0], dd]);
    let mut n_prev = n1;
    for &k in &tuple[1..] {
        v = leaky((1.0 + 1.0 / n_prev as f64) * (v * raw.at(&[t, k, dd])));
        n_prev *= n1;
    }
    v
}

fn tuples(n1: usize, len: usize) -> Vec<Vec<usize>> {
    if len == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for head in tuples(n1, len - 1) {
        for k in 0..n1 {
            let mut t = head.clone();
            t.push(k);
            out.push(t);
        }
    }
    out
}

#[test]
fn identity_stack_matches_hadamard_enumeration() {
    for (n1, d, t) in [(1, 1, 1), (2, 2, 2), (3, 2, 2), (3, 1, 1), (2, 1, 2)] {
        let mut rng = ChaCha8Rng::seed_from_u64((n1 * 100 + d * 10 + t) as u64);
        let mut store = ParamStore::new();
        let blocks = identity_blocks(&mut store, n1, t, 3);
        let raw_t = random(&[t, n1, d], &mut rng);
        let mut tape = Tape::new();
        let raw = tape.constant(raw_t.clone());
        let stack = run_stack(&mut tape, raw, &blocks, &store).unwrap();
        for (i, &rank_var) in stack.ranks.iter().enumerate() {
            let got = tape.value(rank_var);
            for (c, tuple) in tuples(n1, i + 1).iter().enumerate() {
                for step in 0..t {
                    for dd in 0..d {
                        let want = hadamard_path(&raw_t, step, tuple, n1, dd);
                        assert_eq!(got.at(&[step, c, dd]), want, "n1={n1} rank={} tuple={tuple:?}", i + 1);
                    }
                }
            }
        }
    }
}

#[test]
fn zeroed_raw_feature_zeroes_its_crossings() {
    let (n1, d, t) = (3, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let blocks = identity_blocks(&mut store, n1, t, 3);
    let mut raw_t = random(&[t, n1, d], &mut rng);
    for step in 0..t {
        for dd in 0..d {
            raw_t.set(&[step, 1, dd], 0.0);
        }
    }
    let mut tape = Tape::new();
    let raw = tape.constant(raw_t);
    let stack = run_stack(&mut tape, raw, &blocks, &store).unwrap();
    for (i, &rank_var) in stack.ranks.iter().enumerate().skip(1) {
        let got = tape.value(rank_var);
        for (c, tuple) in tuples(n1, i + 1).iter().enumerate() {
            let zero = (0..t).all(|s| (0..d).all(|dd| got.at(&[s, c, dd]) == 0.0));
            assert_eq!(zero, tuple.contains(&1), "tuple {tuple:?}");
        }
    }
}

/// Plain-loop evaluation of the stack with arbitrary weights.
fn stack_oracle(raw: &Tensor<f64>, blocks: &[CrossingBlockParams], store: &ParamStore<f64>) -> Vec<Vec<f64>> {
    let (t, n1, d) = (raw.shape()[0], raw.shape()[1], raw.shape()[2]);
    let mut prev: Vec<f64> = raw.data().to_vec();
    let mut n_prev = n1;
    let mut out = vec![prev.clone()];
    let idx = |s: usize, c: usize, dd: usize, n: usize| (s * n + c) * d + dd;
    for b in blocks {
        let wq = store.value(b.w_query).data();
        let wk = store.value(b.w_key).data();
        let wp = store.value(b.w_pca);
        let mut q = vec![0.0; n_prev * d];
        let mut k = vec![0.0; n1 * d];
        for s in 0..t {
            for m in 0..n_prev {
                for dd in 0..d {
                    q[m * d + dd] += wq[s] * prev[idx(s, m, dd, n_prev)];
                }
            }
            for j in 0..n1 {
                for dd in 0..d {
                    k[j * d + dd] += wk[s] * raw.data()[idx(s, j, dd, n1)];
                }
            }
        }
        let mut a = vec![0.0; n_prev * n1];
        for j in 0..n1 {
            let logits: Vec<f64> = (0..n_prev)
                .map(|m| (0..d).map(|dd| q[m * d + dd] * k[j * d + dd]).sum())
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            for m in 0..n_prev {
                a[m * n1 + j] = (logits[m] - mx).exp() / z;
            }
        }
        let c_in = n_prev * n1;
        let mut next = vec![0.0; t * b.n_out * d];
        for s in 0..t {
            for c in 0..c_in {
                let (m, j) = (c / n1, c % n1);
                for dd in 0..d {
                    let x = prev[idx(s, m, dd, n_prev)] * raw.data()[idx(s, j, dd, n1)];
                    let y = leaky((1.0 + a[c]) * x);
                    for o in 0..b.n_out {
                        next[idx(s, o, dd, b.n_out)] += wp.at(&[c, o]) * y;
                    }
                }
            }
        }
        out.push(next.clone());
        prev = next;
        n_prev = b.n_out;
    }
    out
}

#[test]
fn three_rank_stack_matches_loop_oracle() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n1, d, t) = (3, 2, 3);
        let mut store = ParamStore::new();
        let blocks = init_blocks(&mut store, n1, &[4, 3], t, &mut rng);
        for b in &blocks {
            store.get_mut(b.w_query).value = random(&[t], &mut rng);
            store.get_mut(b.w_key).value = random(&[t], &mut rng);
        }
        let raw_t = random(&[t, n1, d], &mut rng);
        let want = stack_oracle(&raw_t, &blocks, &store);
        let mut tape = Tape::new();
        let raw = tape.constant(raw_t);
        let stack = run_stack(&mut tape, raw, &blocks, &store).unwrap();
        for (v, w) in stack.ranks.iter().zip(&want) {
            for (a, b) in tape.value(*v).data().iter().zip(w) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
        let concat = tape.value(stack.concat);
        assert_eq!(concat.shape(), &[t, 3 + 4 + 3, d]);
    }
}

#[test]
fn origin_expansion_reaches_rank_many_raw_features() {
    use deepcross::crossing::channel_origin;
    let n1: usize = 3;
    fn expand(c: usize, rank: usize, n1: usize) -> Vec<usize> {
        if rank == 1 {
            return vec![c];
        }
        let (m, k) = channel_origin(c, n1);
        let mut v = expand(m, rank - 1, n1);
        v.push(k);
        v
    }
    for rank in 2..=4 {
        let n_prev = n1.pow(rank as u32 - 1);
        let mut seen = std::collections::HashSet::new();
        for c in 0..n_prev * n1 {
            let e = expand(c, rank, n1);
            assert_eq!(e.len(), rank);
            assert!(seen.insert(e));
        }
    }
}

proptest! {
    #[test]
    fn all_attention_vectors_are_distributions(seed in any::<u64>(), n1 in 1usize..4, t in 1usize..4, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let blocks = init_blocks(&mut store, n1, &[3, 2], t, &mut rng);
        for b in &blocks {
            store.get_mut(b.w_query).value = random(&[t], &mut rng).map(|v| 3.0 * v);
            store.get_mut(b.w_key).value = random(&[t], &mut rng).map(|v| 3.0 * v);
        }
        let mut tape = Tape::new();
        let raw = tape.constant(random(&[t, n1, d], &mut rng).map(|v| 2.0 * v));
        let stack = run_stack(&mut tape, raw, &blocks, &store).unwrap();
        for &a in &stack.attentions {
            let v = tape.value(a);
            let (rows, cols) = (v.shape()[0], v.shape()[1]);
            for k in 0..cols {
                let s: f64 = (0..rows).map(|m| v.at(&[m, k])).sum();
                prop_assert!((s - 1.0).abs() <= 1e-9);
            }
        }
        let n = tape.shape(stack.concat)[1];
        let wf = tape.constant(random(&[n, t, d], &mut rng));
        let (feat, p) = feature_attention(&mut tape, stack.concat, wf).unwrap();
        let s = if t >= 3 { 3 } else { 1 };
        let ws = tape.constant(random(&[s, n, d], &mut rng));
        let (_, q) = temporal_attention(&mut tape, feat, ws, s).unwrap();
        for v in [p, q] {
            let v = tape.value(v).data();
            prop_assert!(v.iter().all(|&x| x >= 0.0));
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn feature_attention_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..5) {
        let (t, d) = (2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[t, n, d], &mut rng);
        let w = random(&[n, t, d], &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(1);
        let px = Tensor::from_fn([t, n, d], |i| {
            let (s, c, dd) = (i / (n * d), (i / d) % n, i % d);
            x.at(&[s, perm[c], dd])
        });
        let pw = Tensor::from_fn([n, t, d], |i| {
            let (c, rest) = (i / (t * d), i % (t * d));
            w.data()[perm[c] * t * d + rest]
        });
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x), tape.constant(w));
        let (out, p) = feature_attention(&mut tape, xv, wv).unwrap();
        let (pxv, pwv) = (tape.constant(px), tape.constant(pw));
        let (pout, pp) = feature_attention(&mut tape, pxv, pwv).unwrap();
        for c in 0..n {
            prop_assert!((tape.value(pp).data()[c] - tape.value(p).data()[perm[c]]).abs() < 1e-15);
            for s in 0..t {
                for dd in 0..d {
                    prop_assert!((tape.value(pout).at(&[s, c, dd]) - tape.value(out).at(&[s, perm[c], dd])).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn lq_strictly_decreasing_in_p(q in 0.01f64..=1.0, a in 0.01f64..0.99, gap in 0.001f64..0.5) {
        let b = (a + gap).min(1.0);
        prop_assume!(b > a);
        prop_assert!(lq_value(b, q).unwrap() < lq_value(a, q).unwrap());
    }
}

fn mixed_schema() -> Schema {
    Schema {
        fields: vec![
            FeatureField {
                name: "n".into(),
                kind: FieldKind::Numerical,
                vocab: vec![],
                mean: 0.0,
                std: 1.0,
            },
            FeatureField {
                name: "c".into(),
                kind: FieldKind::Categorical,
                vocab: vec!["a".into(), "b".into(), "c".into()],
                mean: 0.0,
                std: 1.0,
            },
            FeatureField {
                name: "m".into(),
                kind: FieldKind::MultiValued,
                vocab: vec!["a".into(), "b".into(), "c".into()],
                mean: 0.0,
                std: 1.0,
            },
        ],
    }
}

#[test]
fn embedding_one_hot_distribution_equals_lookup_and_numbers_are_linear() {
    let schema = mixed_schema();
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = EmbeddingParams::init(&mut store, &schema, 4, &mut rng);
    // the multi-valued table gets the categorical table's values
    let (tc, tm) = (params.tables[1].unwrap(), params.tables[2].unwrap());
    store.get_mut(tm).value = store.value(tc).clone();
    let sample = |x: f64, dist: Vec<f64>| EncodedSample {
        entity_id: "e".into(),
        steps: vec![vec![Encoded::Number(x), Encoded::Index(2), Encoded::Distribution(dist)]],
        label: 0,
    };
    let mut tape = Tape::new();
    let e1 = embed_sample(&mut tape, &sample(0.7, vec![0.0, 0.0, 1.0, 0.0]), &schema, &params, &store).unwrap();
    let e2 = embed_sample(&mut tape, &sample(-2.1, vec![0.0, 0.0, 1.0, 0.0]), &schema, &params, &store).unwrap();
    let (v1, v2) = (tape.value(e1), tape.value(e2));
    for dd in 0..4 {
        assert_eq!(v1.at(&[0, 1, dd]), v1.at(&[0, 2, dd]));
        assert!((v2.at(&[0, 0, dd]) - (-2.1 / 0.7) * v1.at(&[0, 0, dd])).abs() < 1e-12);
    }
}

fn tiny_model(seed: u64) -> (DeepCross<f64>, Vec<EncodedSample>) {
    let raw = gen_synthetic_interaction(6, 3, 1, seed).unwrap();
    let built = build_schema(&raw).unwrap();
    let samples = normalize_all(&raw, &built.schema).unwrap();
    let config = ModelConfig {
        time_span: 3,
        dim: 4,
        rank_widths: vec![4],
        window: 3,
        hidden: 5,
        classes: 2,
    };
    let mut model = DeepCross::new(built.schema, config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for p in model.store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    (model, samples)
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for seed in [1, 2, 3] {
        let (mut model, samples) = tiny_model(seed);
        let r = model_grad_check(&mut model, &samples[..3], 0.5, 1e-2, 1e-4, 1e-3).unwrap();
        assert!(r.passed(), "seed {seed}: {r:?}");
    }
}

#[test]
fn gru_gradient_through_three_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (h, n) = (3, 2);
    let mut store = ParamStore::new();
    let ids: Vec<_> = (0..3).map(|i| store.add(format!("w{i}"), random(&[h, h + n], &mut rng))).collect();
    let es: Vec<Tensor<f64>> = (0..3).map(|_| random(&[n], &mut rng)).collect();
    let r = grad_check(
        &mut store,
        |tape, store| {
            let w: Vec<_> = ids.iter().map(|&id| tape.param(store, id)).collect();
            let inputs: Vec<_> = es.iter().map(|e| tape.constant(e.clone())).collect();
            let h0 = tape.constant(Tensor::from_f64([h], &[0.1, -0.2, 0.3]).unwrap());
            let out = gru_forward(tape, &inputs, w[0], w[1], w[2], h0)?;
            let sq = tape.hadamard(out, out)?;
            Ok(tape.sum(sq))
        },
        1e-4,
        1e-3,
    )
    .unwrap();
    assert!(r.passed(), "{r:?}");
}

#[test]
fn objective_is_hand_checkable() {
    let (model, samples) = tiny_model(5);
    let s = &samples[0];
    let pred = model.predict(s).unwrap();
    let q = 0.5;
    let lasso: f64 = model.pca_weights().iter().map(|w| w.data().iter().map(|v| v.abs()).sum::<f64>()).sum();
    let want = lq_value(pred.r[s.label], q).unwrap() + 0.01 * lasso;
    let mut tape = Tape::new();
    let obj = model.objective(&mut tape, &[s], q, 0.01).unwrap();
    assert!((tape.value(obj).item().unwrap() - want).abs() < 1e-12);
    let mut tape = Tape::new();
    let plain = model.objective(&mut tape, &[s], q, 0.0).unwrap();
    assert!((tape.value(plain).item().unwrap() - lq_value(pred.r[s.label], q).unwrap()).abs() < 1e-12);
}

fn synthetic_config(epochs: usize) -> (Vec<EncodedSample>, Schema, TrainConfig) {
    let raw = gen_synthetic_interaction(300, 2, 2, 7).unwrap();
    let built = build_schema(&raw).unwrap();
    let samples = normalize_all(&raw, &built.schema).unwrap();
    let config = TrainConfig {
        model: ModelConfig {
            time_span: 2,
            dim: 8,
            rank_widths: vec![8],
            window: 1,
            hidden: 16,
            classes: 2,
        },
        lr: 0.01,
        epochs,
        seed: 7,
        ..TrainConfig::default()
    };
    (samples, built.schema, config)
}

#[test]
fn five_epoch_loss_trace_mostly_decreases() {
    let (samples, schema, config) = synthetic_config(5);
    let out = deepcross::train::<f64>(&samples, &schema, &config).unwrap();
    let losses: Vec<f64> = out.trace.iter().map(|e| e.mean_loss).collect();
    let down = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down >= 3, "trace {losses:?}");
}

#[test]
fn zero_rate_leaves_parameters_and_seed_repeats_exactly() {
    let (samples, schema, mut config) = synthetic_config(2);
    let a = deepcross::train::<f64>(&samples, &schema, &config).unwrap();
    let b = deepcross::train::<f64>(&samples, &schema, &config).unwrap();
    for (x, y) in a.model.store.iter().zip(b.model.store.iter()) {
        assert_eq!(x.value, y.value);
    }
    config.lr = 0.0;
    let fresh = DeepCross::<f64>::new(schema.clone(), config.model.clone(), config.seed).unwrap();
    let trained = train_model(fresh.clone(), &samples, &config).unwrap();
    for (x, y) in fresh.store.iter().zip(trained.model.store.iter()) {
        assert_eq!(x.value, y.value);
    }
}

#[test]
fn single_precision_model_trains() {
    let (samples, schema, config) = synthetic_config(1);
    let out = deepcross::train::<f32>(&samples, &schema, &config).unwrap();
    assert!(out.trace[0].mean_loss.is_finite());
    let p = out.model.predict(&samples[0]).unwrap();
    assert!((p.r.iter().sum::<f64>() - 1.0).abs() < 1e-5);
}

#[test]
fn residual_dominance_with_zero_attention_weights() {
    let (model, samples) = {
        let raw = gen_synthetic_interaction(2, 3, 1, 1).unwrap();
        let built = build_schema(&raw).unwrap();
        let samples = normalize_all(&raw, &built.schema).unwrap();
        let config = ModelConfig {
            time_span: 3,
            dim: 4,
            rank_widths: vec![2],
            window: 3,
            hidden: 5,
            classes: 2,
        };
        (DeepCross::<f64>::new(built.schema, config, 3).unwrap(), samples)
    };
    let p = model.predict(&samples[0]).unwrap();
    assert!(p.p.iter().all(|&v| (v - 1.0 / 5.0).abs() < 1e-15));
    assert!(p.q.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
}
