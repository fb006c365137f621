use dml_autodiff::{
    gradcheck, gradcheck_params, AutodiffError, GradcheckOptions, Result, Tape, Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Weighted sum so that every output element carries a distinct cotangent.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let w = random(&shape, seed).with_requires_grad(false);
    let w = tape.leaf(&w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let b = random(&[4, 3], 2).with_requires_grad(false);
    let a = random(&[2, 4], 1);
    let report = gradcheck(
        |tape, a| {
            let bv = tape.leaf(&b);
            let y = tape.matmul(a, bv)?;
            Ok(tape.sum(y))
        },
        &a,
        1e-6,
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.worst());

    let bt = random(&[3, 4], 3);
    let report = gradcheck(
        |tape, b| {
            let av = tape.leaf(&a);
            let y = tape.matmul_nt(av, b)?;
            weighted_sum(tape, y, 9)
        },
        &bt,
        1e-6,
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.worst());
}

#[test]
fn elementwise_gradients() {
    let other = random(&[3, 5], 11).with_requires_grad(false);
    type Build = fn(&mut Tape, Var, Var) -> Result<Var>;
    let kinds: [(&str, Build); 7] = [
        ("relu", |t, x, _| Ok(t.relu(x))),
        ("sigmoid", |t, x, _| Ok(t.sigmoid(x))),
        ("tanh", |t, x, _| Ok(t.tanh(x))),
        ("add", |t, x, o| t.add(x, o)),
        ("sub", |t, x, o| t.sub(o, x)),
        ("mul", |t, x, o| t.mul(x, o)),
        ("square", |t, x, _| Ok(t.square(x))),
    ];
    for (i, (name, build)) in kinds.iter().enumerate() {
        let mut x = random(&[3, 5], 20 + i as u64);
        if *name == "relu" {
            // keep every coordinate well away from the kink at 0
            for v in x.data_mut() {
                if v.abs() < 0.05 {
                    *v += 0.1;
                }
            }
        }
        let report = gradcheck(
            |tape, x| {
                let o = tape.leaf(&other);
                let y = build(tape, x, o)?;
                weighted_sum(tape, y, 5)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{name}: {:?}", report.worst());
    }
}

#[test]
fn softmax_gradients() {
    let x = random(&[4, 8], 3);
    let report = gradcheck(
        |tape, x| {
            let y = tape.softmax_lastdim(x);
            weighted_sum(tape, y, 4)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.worst());

    let s = random(&[6, 6], 8);
    let report = gradcheck(
        |tape, x| {
            let y = tape.softmax_causal(x)?;
            weighted_sum(tape, y, 4)
        },
        &s,
        1e-6,
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.worst());
}

#[test]
fn conv_layer_norm_and_shape_gradients() {
    let params = vec![
        random(&[12, 3], 1),
        random(&[4, 3, 2], 2),
        random(&[2], 3),
        random(&[2], 4),
        random(&[2], 5),
    ];
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(ti, p)| (0..p.numel()).map(move |i| (ti, i)))
        .collect();
    let report = gradcheck_params(
        |tape, v| {
            let y = tape.conv1d_causal(v[0], v[1], v[2])?;
            let y = tape.layer_norm(y, v[3], v[4], 1e-5)?;
            let top = tape.slice_rows(y, 2, 7)?;
            let l = tape.slice_cols(top, 1, 1)?;
            let lags = tape.lag_matrix(l, 3)?;
            let pairs = tape.pair_products(lags)?;
            let both = tape.concat_cols(&[pairs, lags])?;
            let tall = tape.concat_rows(&[both, both])?;
            weighted_sum(tape, tall, 6)
        },
        &params,
        &coords,
        GradcheckOptions::with_tol(1e-6),
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.worst());
}

#[test]
fn causal_attention_gradients() {
    // T = 70 spans two row blocks.
    let params = vec![
        random(&[70, 6], 1),
        random(&[70, 6], 2),
        random(&[70, 6], 3),
    ];
    let coords = dml_autodiff::sample_coords(&params, 60, 1);
    let report = gradcheck_params(
        |tape, v| {
            let y = tape.causal_attention(v[0], v[1], v[2], 3)?;
            weighted_sum(tape, y, 12)
        },
        &params,
        &coords,
        GradcheckOptions::with_tol(1e-6),
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.worst());
}

#[test]
fn fused_attention_matches_composed_reference() {
    let (t, d, heads) = (70, 4, 2);
    let q = random(&[t, d], 1);
    let k = random(&[t, d], 2);
    let v = random(&[t, d], 3);
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.leaf(&q), tape.leaf(&k), tape.leaf(&v));
    let fused = tape.causal_attention(qv, kv, vv, heads).unwrap();
    let dh = d / heads;
    let mut outs = Vec::new();
    for h in 0..heads {
        let qh = tape.slice_cols(qv, h * dh, dh).unwrap();
        let kh = tape.slice_cols(kv, h * dh, dh).unwrap();
        let vh = tape.slice_cols(vv, h * dh, dh).unwrap();
        let s = tape.matmul_nt(qh, kh).unwrap();
        let s = tape.scale(s, 1.0 / (dh as f64).sqrt());
        let p = tape.softmax_causal(s).unwrap();
        outs.push(tape.matmul(p, vh).unwrap());
    }
    let composed = tape.concat_cols(&outs).unwrap();
    for (a, b) in tape.value(fused).iter().zip(tape.value(composed)) {
        assert!((a - b).abs() < 1e-12);
    }
    let probs = tape.attention_probs(fused).unwrap();
    for row in 0..heads * t {
        let i = row % t;
        let r = &probs[row * t..(row + 1) * t];
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r[i + 1..].iter().all(|&p| p == 0.0));
    }
}

#[test]
fn conv_is_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let kernel = random(&[9, 2, 3], 1);
    let bias = random(&[3], 2);
    let x = random(&[64, 2], 3);
    let run = |x: &Tensor| {
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.leaf(x), tape.leaf(&kernel), tape.leaf(&bias));
        let y = tape.conv1d_causal(xv, kv, bv).unwrap();
        tape.value(y).to_vec()
    };
    let base = run(&x);
    for _ in 0..20 {
        let t0 = rng.random_range(0..64);
        let mut xp = x.clone();
        xp.data_mut()[t0 * 2] += 1.0;
        let y = run(&xp);
        assert_eq!(&y[..t0 * 3], &base[..t0 * 3]);
        assert_ne!(&y[t0 * 3..], &base[t0 * 3..]);
    }
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let theta = tape.variable(&[], vec![3.0]).unwrap();
    let loss = tape.square(theta);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(theta).unwrap(), &[6.0]);

    let mut tape = Tape::new();
    let theta = tape.variable(&[], vec![3.0]).unwrap();
    let loss = tape.add(theta, theta).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(theta).unwrap(), &[2.0]);
}

#[test]
fn non_scalar_loss_is_a_contract_error() {
    let mut tape = Tape::new();
    let x = tape.variable(&[2], vec![1.0, 2.0]).unwrap();
    let y = tape.square(x);
    assert!(matches!(tape.backward(y), Err(AutodiffError::Contract(_))));
}

#[test]
fn frozen_leaves_get_no_gradient() {
    let mut tape = Tape::new();
    let w = tape.variable(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let x = tape.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let y = tape.matmul(x, w).unwrap();
    let l = tape.sum(y);
    let g = tape.backward(l).unwrap();
    assert!(g.get(w).is_some());
    assert!(g.get(x).is_none());
}

#[test]
fn accumulation_is_order_independent() {
    // Same graph, independent branches recorded in opposite orders.
    let a = random(&[5, 4], 1);
    let b = random(&[4, 3], 2);
    let build = |swap: bool| {
        let mut tape = Tape::new();
        let (av, bv) = (tape.leaf(&a), tape.leaf(&b));
        let branch1 = |t: &mut Tape| {
            let y = t.matmul(av, bv).unwrap();
            let y = t.tanh(y);
            t.sum(y)
        };
        let branch2 = |t: &mut Tape| {
            let y = t.square(av);
            t.mean(y).unwrap()
        };
        let (l1, l2) = if swap {
            let l2 = branch2(&mut tape);
            (branch1(&mut tape), l2)
        } else {
            let l1 = branch1(&mut tape);
            (l1, branch2(&mut tape))
        };
        let loss = tape.add(l1, l2).unwrap();
        let g = tape.backward(loss).unwrap();
        (g.get(av).unwrap().to_vec(), g.get(bv).unwrap().to_vec())
    };
    let (ga1, gb1) = build(false);
    let (ga2, gb2) = build(true);
    for (x, y) in ga1.iter().zip(&ga2).chain(gb1.iter().zip(&gb2)) {
        assert!((x - y).abs() <= 1e-15);
    }
}

#[test]
fn sum_of_squares_is_exact() {
    let theta = Tensor::param(&[4], vec![0.5, -1.25, 2.0, 3.0]).unwrap();
    let report = gradcheck(
        |tape, x| {
            let y = tape.square(x);
            Ok(tape.sum(y))
        },
        &theta,
        1e-10,
    )
    .unwrap();
    assert!(report.passed(), "{}", report.max_rel_error);
}

#[test]
fn checker_rejects_a_corrupted_backward_rule() {
    let theta = random(&[6], 3);
    // Correct forward (x³) paired with a wrong VJP (2x instead of 3x²).
    let report = gradcheck(
        |tape, x| {
            let value = tape.value(x).iter().map(|v| v * v * v).collect();
            let shape = tape.shape(x).to_vec();
            let y = tape.custom(
                &[x],
                &shape,
                value,
                Box::new(|inputs, _, g| {
                    vec![inputs[0].iter().zip(g).map(|(x, g)| 2.0 * x * g).collect()]
                }),
            )?;
            Ok(tape.sum(y))
        },
        &theta,
        1e-6,
    )
    .unwrap();
    assert!(!report.passed());

    // The same op with the correct VJP passes.
    let report = gradcheck(
        |tape, x| {
            let value = tape.value(x).iter().map(|v| v * v * v).collect();
            let shape = tape.shape(x).to_vec();
            let y = tape.custom(
                &[x],
                &shape,
                value,
                Box::new(|inputs, _, g| {
                    vec![inputs[0]
                        .iter()
                        .zip(g)
                        .map(|(x, g)| 3.0 * x * x * g)
                        .collect()]
                }),
            )?;
            Ok(tape.sum(y))
        },
        &theta,
        1e-6,
    )
    .unwrap();
    assert!(report.passed(), "{}", report.max_rel_error);
}

#[test]
fn nondeterministic_function_is_rejected() {
    let calls = std::cell::Cell::new(0u32);
    let theta = random(&[3], 1);
    let result = gradcheck(
        |tape, x| {
            calls.set(calls.get() + 1);
            let y = tape.scale(x, calls.get() as f64);
            Ok(tape.sum(y))
        },
        &theta,
        1e-6,
    );
    assert!(matches!(result, Err(AutodiffError::Contract(_))));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..12, seed in 0u64..1000, spread in 0.1f64..500.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-spread..spread)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(&[rows, cols], data).unwrap();
        let y = tape.softmax_lastdim(x);
        for row in tape.value(y).chunks(cols) {
            prop_assert!(row.iter().all(|&p| p >= 0.0 && p.is_finite()));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn forward_values_stay_finite(seed in 0u64..500) {
        let x = random(&[16, 4], seed);
        let w = random(&[4, 4], seed + 1);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.leaf(&x), tape.leaf(&w));
        let y = tape.matmul(xv, wv).unwrap();
        let y = tape.causal_attention(y, y, y, 2).unwrap();
        let y = tape.sigmoid(y);
        prop_assert!(tape.value(y).iter().all(|v| v.is_finite()));
    }
}
