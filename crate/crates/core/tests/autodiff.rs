mod common;

use common::*;
use nupix::autodiff::{
    conv_output_len, dropout, se_block, softmax_rows, SeWeights, Tape, Tensor, Var,
};
use proptest::prelude::*;
use rand::Rng;

const TOL: f64 = 1e-4;

/// Uniform samples in `[-range, range]` kept away from activation kinks.
fn away_from_kinks(rng: &mut impl Rng, shape: &[usize], range: f64, kinks: &[f64]) -> Tensor {
    Tensor::from_fn(shape, |_| loop {
        let v = rng.random_range(-range..range);
        if kinks.iter().all(|k| (v - k).abs() > 1e-2) {
            break v;
        }
    })
}

#[test]
fn conv2d_gradients() {
    let mut r = rng(11);
    for &(stride, pad, groups, cin, cout) in &[(1, 0, 1, 2, 3), (2, 1, 1, 3, 2), (1, 1, 4, 4, 4), (2, 1, 2, 4, 6)] {
        let x = random_tensor(&mut r, &[2, cin, 6, 5], 1.0);
        let k = random_tensor(&mut r, &[cout, cin / groups, 3, 3], 1.0);
        let err = max_gradient_error(&[x, k], |tape, v| {
            let y = v[0].conv2d(v[1], stride, pad, groups).unwrap();
            weighted_sum(tape, y, 5)
        });
        assert!(err < TOL, "conv2d s{stride} p{pad} g{groups}: {err}");
    }
}

#[test]
fn activation_gradients() {
    let mut r = rng(12);
    let x = away_from_kinks(&mut r, &[3, 7], 8.0, &[0.0, 6.0]);
    let err = max_gradient_error(&[x], |tape, v| weighted_sum(tape, v[0].relu6(), 1));
    assert!(err < TOL, "relu6 {err}");

    let x = away_from_kinks(&mut r, &[3, 7], 6.0, &[-3.0, 3.0]);
    let err = max_gradient_error(&[x], |tape, v| weighted_sum(tape, v[0].hard_swish(), 2));
    assert!(err < TOL, "hard_swish {err}");

    let x = random_tensor(&mut r, &[3, 7], 6.0);
    let err = max_gradient_error(&[x], |tape, v| weighted_sum(tape, v[0].sigmoid(), 3));
    assert!(err < TOL, "sigmoid {err}");
}

#[test]
fn dense_pool_concat_bias_gradients() {
    let mut r = rng(13);
    let x = random_tensor(&mut r, &[4, 5], 1.0);
    let w = random_tensor(&mut r, &[3, 5], 1.0);
    let b = random_tensor(&mut r, &[3], 1.0);
    let err = max_gradient_error(&[x, w, b], |tape, v| {
        weighted_sum(tape, v[0].linear(v[1]).unwrap().add_bias(v[2]).unwrap(), 4)
    });
    assert!(err < TOL, "dense {err}");

    let a = random_tensor(&mut r, &[2, 3, 4, 4], 1.0);
    let b = random_tensor(&mut r, &[2, 2, 4, 4], 1.0);
    let err = max_gradient_error(&[a, b], |tape, v| {
        let cat = v[0].concat_channels(v[1]).unwrap();
        let pooled = cat.global_avg_pool().unwrap();
        weighted_sum(tape, pooled, 6).add(weighted_sum(tape, cat, 7)).unwrap()
    });
    assert!(err < TOL, "concat/pool {err}");

    let x = random_tensor(&mut r, &[2, 3, 4, 4], 1.0);
    let g = random_tensor(&mut r, &[2, 3], 1.0);
    let err = max_gradient_error(&[x, g], |tape, v| {
        weighted_sum(tape, v[0].channel_scale(v[1]).unwrap(), 8)
    });
    assert!(err < TOL, "channel_scale {err}");
}

#[test]
fn se_block_gradients() {
    let mut r = rng(14);
    let inputs = vec![
        random_tensor(&mut r, &[2, 4, 3, 3], 1.0),
        random_tensor(&mut r, &[2, 4], 1.0),
        random_tensor(&mut r, &[2], 1.0),
        random_tensor(&mut r, &[4, 2], 1.0),
        random_tensor(&mut r, &[4], 1.0),
    ];
    let err = max_gradient_error(&inputs, |tape, v| {
        let w = SeWeights { reduce_w: v[1], reduce_b: v[2], expand_w: v[3], expand_b: v[4] };
        weighted_sum(tape, se_block(v[0], w, 2).unwrap(), 9)
    });
    assert!(err < TOL, "se_block {err}");
}

#[test]
fn softmax_cross_entropy_gradient_identity() {
    let mut r = rng(15);
    let logits = random_tensor(&mut r, &[5, 3], 3.0);
    let labels = [0usize, 2, 1, 1, 0];
    let err = max_gradient_error(&[logits.clone()], |_, v| v[0].softmax_cross_entropy(&labels).unwrap());
    assert!(err < TOL, "softmax-ce {err}");

    let tape = Tape::new();
    let l = tape.leaf(logits.clone());
    let loss = l.softmax_cross_entropy(&labels).unwrap();
    let g = tape.backward(loss).unwrap().get(l);
    let p = softmax_rows(&logits);
    for (row, &label) in labels.iter().enumerate() {
        for c in 0..3 {
            let onehot = if c == label { 1.0 } else { 0.0 };
            let expected = (p.data()[row * 3 + c] - onehot) / 5.0;
            assert!((g.data()[row * 3 + c] - expected).abs() < 1e-15);
        }
    }
}

#[test]
fn dropout_gradient_uses_mask() {
    let mut r = rng(16);
    let x = random_tensor(&mut r, &[3, 6], 1.0);
    let err = max_gradient_error(&[x], |tape, v| {
        let mut drop_rng = rng(99);
        weighted_sum(tape, dropout(v[0], 0.3, &mut drop_rng).unwrap(), 10)
    });
    assert!(err < TOL, "dropout {err}");
}

#[test]
fn random_depth5_compositions() {
    for seed in 0..20 {
        let (inputs, f) = random_composition(seed, 5);
        let err = max_gradient_error(&inputs, f);
        assert!(err < TOL, "composition seed {seed}: {err}");
    }
}

#[test]
fn conv2d_matches_hand_oracle() {
    let x = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64 + 1.0);
    let k = Tensor::new(vec![1, 1, 3, 3], vec![1.0, 0.0, -1.0, 2.0, 0.5, 0.0, 0.0, 1.0, -2.0]).unwrap();
    // window at (0,0): rows [1 2 3],[5 6 7],[9 10 11]
    //   1*1 - 3 + 2*5 + 0.5*6 + 10 - 2*11 = -1
    let tape = Tape::new();
    let y = tape.leaf(x.clone()).conv2d(tape.leaf(k.clone()), 1, 0, 1).unwrap().value();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.data()[0], -1.0);
    // every window shifts each input by +1 (or +4 per row); the kernel sums to 1.5
    assert_eq!(y.data(), &[-1.0, 0.5, 5.0, 6.5]);
    assert_eq!(y, brute_force_conv(&x, &k, 1, 0, 1));
}

#[test]
fn conv2d_matches_brute_force_on_random_shapes() {
    let mut r = rng(17);
    for _ in 0..50 {
        let groups = [1, 2][r.random_range(0..2)];
        let cin = groups * r.random_range(1..3);
        let cout = groups * r.random_range(1..3);
        let kh = r.random_range(1..4);
        let stride = r.random_range(1..3);
        let pad = r.random_range(0..2);
        let h = r.random_range(kh..8);
        let x = random_tensor(&mut r, &[2, cin, h, h + 1], 1.0);
        let k = random_tensor(&mut r, &[cout, cin / groups, kh, kh], 1.0);
        let tape = Tape::new();
        let y = tape.leaf(x.clone()).conv2d(tape.leaf(k.clone()), stride, pad, groups).unwrap().value();
        let oracle = brute_force_conv(&x, &k, stride, pad, groups);
        assert_eq!(y.shape(), oracle.shape());
        for (a, b) in y.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn size_formula_example() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[1, 1, 5, 5]));
    let k = tape.leaf(Tensor::zeros(&[1, 1, 3, 3]));
    assert_eq!(x.conv2d(k, 2, 1, 1).unwrap().shape(), vec![1, 1, 3, 3]);
}

#[test]
fn conv2d_is_linear_in_input() {
    let mut r = rng(18);
    let x = random_tensor(&mut r, &[2, 3, 6, 6], 1.0);
    let y = random_tensor(&mut r, &[2, 3, 6, 6], 1.0);
    let k = random_tensor(&mut r, &[4, 3, 3, 3], 1.0);
    let (a, b) = (0.7, -1.3);
    let conv = |t: &Tensor| {
        let tape = Tape::new();
        tape.leaf(t.clone()).conv2d(tape.leaf(k.clone()), 1, 1, 1).unwrap().value()
    };
    let mix = Tensor::new(
        x.shape().to_vec(),
        x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
    )
    .unwrap();
    let lhs = conv(&mix);
    let (cx, cy) = (conv(&x), conv(&y));
    for i in 0..lhs.numel() {
        let rhs = a * cx.data()[i] + b * cy.data()[i];
        assert!((lhs.data()[i] - rhs).abs() < 1e-12);
    }
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let (inputs, f) = random_composition(3, 5);
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&tape, &vars);
        let grads = tape.backward(loss).unwrap();
        let g: Vec<Tensor> = vars.iter().map(|v| grads.get(*v)).collect();
        (loss.value(), g)
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn conv_output_shape_matches_formula(
        n in 1usize..3, g in 1usize..3, cpg in 1usize..3, opg in 1usize..3,
        h in 1usize..9, w in 1usize..9, k in 1usize..4, stride in 1usize..4, pad in 0usize..3,
    ) {
        let (cin, cout) = (g * cpg, g * opg);
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[n, cin, h, w]));
        let kern = tape.leaf(Tensor::zeros(&[cout, cpg, k, k]));
        match (conv_output_len(h, k, stride, pad), conv_output_len(w, k, stride, pad)) {
            (Some(oh), Some(ow)) => {
                prop_assert_eq!(oh, (h + 2 * pad - k) / stride + 1);
                let y = x.conv2d(kern, stride, pad, g).unwrap();
                prop_assert_eq!(y.shape(), vec![n, cout, oh, ow]);
                let pooled = y.global_avg_pool().unwrap();
                prop_assert_eq!(pooled.shape(), vec![n, cout]);
                let cat = y.concat_channels(y).unwrap();
                prop_assert_eq!(cat.shape(), vec![n, 2 * cout, oh, ow]);
            }
            _ => prop_assert!(x.conv2d(kern, stride, pad, g).is_err()),
        }
    }
}
