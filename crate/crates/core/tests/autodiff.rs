use deepcross::numerics::{grad_check, ParamStore, Tape, Tensor, Var};
use deepcross::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Builds a store with one random parameter per shape and grad-checks `f`.
fn check<F>(shapes: &[&[usize]], seed: u64, f: F) -> f64
where
    F: for<'p> Fn(&mut Tape<'p, f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(format!("p{i}"), random(s, &mut rng)))
        .collect();
    let report = grad_check(
        &mut store,
        |tape, store| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
            f(tape, &vars)
        },
        1e-4,
        1e-3,
    )
    .unwrap();
    assert!(report.entries_checked > 0);
    report.max_rel_err
}

#[test]
fn matmul_sum_gradient() {
    let err = check(&[&[3, 4], &[4, 2]], 1, |t, v| {
        let m = t.matmul(v[0], v[1])?;
        Ok(t.sum(m))
    });
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn sigmoid_of_dot_gradient() {
    let err = check(&[&[1, 5], &[5, 3]], 2, |t, v| {
        let z = t.matmul(v[0], v[1])?;
        let s = t.sigmoid(z);
        Ok(t.sum(s))
    });
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn quadratic_gradient_is_tight() {
    let err = check(&[&[6]], 3, |t, v| {
        let sq = t.hadamard(v[0], v[0])?;
        Ok(t.sum(sq))
    });
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn elementwise_and_shape_ops_gradients() {
    let err = check(&[&[2, 3, 2], &[2, 3, 2], &[3]], 4, |t, v| {
        let a = t.tanh(v[0]);
        let b = t.sub(a, v[1])?;
        let shifted = t.affine(b, 1.0, 3.0);
        let c = t.powf(shifted, 1.5);
        let d = t.permute01(c)?;
        let e = t.reshape(d, [3, 4])?;
        let sm = t.softmax(e)?;
        let rows = t.row_sum(sm)?;
        let w = t.hadamard(rows, v[2])?;
        let sl = t.index0(v[0], 1)?;
        let sl = t.reshape(sl, [6])?;
        let st = t.stack(&[sl, sl])?;
        let st = t.sum(st);
        let cat = t.concat(&[w, v[2]], 0)?;
        let total = t.sum(cat);
        t.add(total, st)
    });
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn kinked_ops_gradients_away_from_kinks() {
    // random values sit far from 0 relative to the step
    let err = check(&[&[4, 3], &[4]], 5, |t, v| {
        let r = t.relu(v[0]);
        let l = t.leaky_relu(v[0], 0.1);
        let a = t.abs(v[1]);
        let c = t.clamp_min(v[1], -0.5);
        let x = t.add(r, l)?;
        let x = t.scale_channels(x, a)?;
        let x = t.sum(x);
        let y = t.sum(c);
        t.add(x, y)
    });
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn crossing_primitive_gradients() {
    let err = check(&[&[2, 2, 3], &[2, 3, 3], &[6, 2], &[2]], 6, |t, v| {
        let crossed = t.cross_rows(v[1], v[0])?;
        let mixed = t.channel_mix(crossed, v[2])?;
        let total = t.sum(mixed);
        let p = t.pick(v[3], 1)?;
        let scaled = t.mul_scalar(v[3], p)?;
        let s = t.sum(scaled);
        let tr = t.transpose(v[2])?;
        let ts = t.sum(tr);
        let u = t.add(total, s)?;
        t.add(u, ts)
    });
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn identical_inputs_give_identical_values() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut t = Tape::<f64>::new();
        let a = t.constant(random(&[3, 3], &mut rng));
        let b = t.matmul(a, a).unwrap();
        let s = t.softmax(b).unwrap();
        t.value(s).data().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn generic_over_f32() {
    let mut t = Tape::<f32>::new();
    let a = t.constant(Tensor::from_f64([2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let s = t.softmax(a).unwrap();
    let row: f32 = t.value(s).data()[..2].iter().sum();
    assert!((row - 1.0).abs() < 1e-6);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..7, seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::<f64>::new();
        let x = t.constant(random(&[rows, cols], &mut rng).map(|v| v * scale));
        let s = t.softmax(x).unwrap();
        for r in t.value(s).data().chunks(cols) {
            prop_assert!(r.iter().all(|&v| v >= 0.0));
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn random_composite_gradients(m in 1usize..4, k in 1usize..4, n in 1usize..4, seed in any::<u64>()) {
        let err = check(&[&[m, k], &[k, n], &[n]], seed, |t, v| {
            let z = t.matmul(v[0], v[1])?;
            let z = t.sigmoid(z);
            let zt = t.transpose(z)?;
            let z = t.scale_channels(zt, v[2])?;
            let z = t.tanh(z);
            Ok(t.sum(z))
        });
        prop_assert!(err <= 1e-3, "relative error {}", err);
    }

    #[test]
    fn matmul_matches_naive(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[m, k], &mut rng);
        let b = random(&[k, n], &mut rng);
        let c = a.matmul(&b).unwrap();
        prop_assert_eq!(c.shape(), &[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at(&[i, p]) * b.at(&[p, j]);
                }
                prop_assert!((c.at(&[i, j]) - s).abs() < 1e-12);
            }
        }
    }
}
