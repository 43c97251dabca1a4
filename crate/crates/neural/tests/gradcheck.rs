//! Finite-difference oracles for every differentiable op.
//!
//! Each case rebuilds its graph from a flat parameter vector, so the checks
//! stay independent of the tape's own backward pass: analytic gradients must
//! match central differences to a relative error of 1e-4 at 64-bit.

use massing_neural::layers::{causal_block, init_block_params, BlockVars, ParamSet};
use massing_neural::tape::{Tape, Var};
use massing_neural::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const REL_TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Central-difference gradient of `f` at `x`.
fn finite_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = 1e-5 * (1.0 + x[i].abs());
        let mut xp = x.to_vec();
        xp[i] += h;
        let mut xm = x.to_vec();
        xm[i] -= h;
        grad[i] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    grad
}

fn assert_close(name: &str, analytic: &[f64], numeric: &[f64]) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(1e-6);
        assert!(
            abs < 1e-8 || rel < REL_TOL,
            "{name}: grad[{i}] analytic {a} vs numeric {n} (rel {rel:.2e})"
        );
    }
}

/// Run one check: `build` maps the flat input to a scalar loss and returns
/// the leaf carrying that input.
fn check(name: &str, x0: &[f64], build: &dyn Fn(&mut Tape, &[f64]) -> (Var, Var)) {
    let f = |x: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let (loss, _) = build(&mut tape, x);
        tape.value(loss).item()
    };
    let mut tape = Tape::new();
    let (loss, leaf) = build(&mut tape, x0);
    let grads = tape.backward(loss).unwrap();
    assert_close(name, grads.wrt(leaf).data(), &finite_diff(&f, x0));
}

/// Deterministic mixing weights so output gradients are non-uniform.
fn mix(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let len = tape.value(out).len();
    let shape = tape.value(out).shape().to_vec();
    let w = Tensor::from_vec(&shape, random_vec(len, &mut rng(seed))).unwrap();
    let w = tape.leaf(w);
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

#[test]
fn matmul_gradients() {
    let mut r = rng(1);
    let a0 = random_vec(6, &mut r);
    let b0 = random_vec(12, &mut r);
    check("matmul wrt a", &a0, &|tape, x| {
        let a = tape.leaf(Tensor::from_vec(&[2, 3], x.to_vec()).unwrap());
        let b = tape.leaf(Tensor::from_vec(&[3, 4], b0.clone()).unwrap());
        let c = tape.matmul(a, b).unwrap();
        (mix(tape, c, 11), a)
    });
    check("matmul wrt b", &b0, &|tape, x| {
        let a = tape.leaf(Tensor::from_vec(&[2, 3], a0.clone()).unwrap());
        let b = tape.leaf(Tensor::from_vec(&[3, 4], x.to_vec()).unwrap());
        let c = tape.matmul(a, b).unwrap();
        (mix(tape, c, 11), b)
    });
}

#[test]
fn elementwise_and_bias_gradients() {
    let mut r = rng(2);
    let x0 = random_vec(8, &mut r);
    let other = random_vec(8, &mut r);
    let bias0 = random_vec(4, &mut r);

    check("add", &x0, &|tape, x| {
        let a = tape.leaf(Tensor::from_vec(&[2, 4], x.to_vec()).unwrap());
        let b = tape.leaf(Tensor::from_vec(&[2, 4], other.clone()).unwrap());
        let c = tape.add(a, b).unwrap();
        (mix(tape, c, 21), a)
    });
    check("sub", &x0, &|tape, x| {
        let a = tape.leaf(Tensor::from_vec(&[2, 4], other.clone()).unwrap());
        let b = tape.leaf(Tensor::from_vec(&[2, 4], x.to_vec()).unwrap());
        let c = tape.sub(a, b).unwrap();
        (mix(tape, c, 22), b)
    });
    check("mul", &x0, &|tape, x| {
        let a = tape.leaf(Tensor::from_vec(&[2, 4], x.to_vec()).unwrap());
        let b = tape.leaf(Tensor::from_vec(&[2, 4], other.clone()).unwrap());
        let c = tape.mul(a, b).unwrap();
        (mix(tape, c, 23), a)
    });
    check("scale", &x0, &|tape, x| {
        let a = tape.leaf(Tensor::from_vec(&[2, 4], x.to_vec()).unwrap());
        let c = tape.scale(a, -1.7);
        (mix(tape, c, 24), a)
    });
    check("add_row_bias wrt bias", &bias0, &|tape, x| {
        let a = tape.leaf(Tensor::from_vec(&[2, 4], x0.clone()).unwrap());
        let b = tape.leaf(Tensor::from_vec(&[4], x.to_vec()).unwrap());
        let c = tape.add_row_bias(a, b).unwrap();
        (mix(tape, c, 25), b)
    });
}

#[test]
fn activation_gradients() {
    let mut r = rng(3);
    let x0 = random_vec(10, &mut r);
    for (name, f) in [
        ("sigmoid", 0usize),
        ("tanh", 1),
        ("exp", 2),
        ("gelu", 3),
        ("scaled_tanh", 4),
    ] {
        check(name, &x0, &|tape, x| {
            let a = tape.leaf(Tensor::from_vec(&[10], x.to_vec()).unwrap());
            let y = match f {
                0 => tape.sigmoid(a),
                1 => tape.tanh(a),
                2 => tape.exp(a),
                3 => tape.gelu(a),
                _ => tape.scaled_tanh(a, 5.0),
            };
            (mix(tape, y, 31), a)
        });
    }
}

#[test]
fn reduction_and_slice_gradients() {
    let mut r = rng(4);
    let x0 = random_vec(12, &mut r);
    check("sum", &x0, &|tape, x| {
        let a = tape.leaf(Tensor::from_vec(&[12], x.to_vec()).unwrap());
        (tape.sum(a), a)
    });
    check("mean", &x0, &|tape, x| {
        let a = tape.leaf(Tensor::from_vec(&[12], x.to_vec()).unwrap());
        (tape.mean(a), a)
    });
    check("rows", &x0, &|tape, x| {
        let a = tape.leaf(Tensor::from_vec(&[4, 3], x.to_vec()).unwrap());
        let sliced = tape.rows(a, 1, 3).unwrap();
        (mix(tape, sliced, 41), a)
    });
}

#[test]
fn softmax_and_layer_norm_gradients() {
    let mut r = rng(5);
    let x0 = random_vec(12, &mut r);
    let gain0 = random_vec(4, &mut r);
    let bias0 = random_vec(4, &mut r);

    check("softmax_rows", &x0, &|tape, x| {
        let a = tape.leaf(Tensor::from_vec(&[3, 4], x.to_vec()).unwrap());
        let y = tape.softmax_rows(a);
        (mix(tape, y, 51), a)
    });
    check("layer_norm wrt x", &x0, &|tape, x| {
        let a = tape.leaf(Tensor::from_vec(&[3, 4], x.to_vec()).unwrap());
        let g = tape.leaf(Tensor::from_vec(&[4], gain0.clone()).unwrap());
        let b = tape.leaf(Tensor::from_vec(&[4], bias0.clone()).unwrap());
        let y = tape.layer_norm(a, g, b).unwrap();
        (mix(tape, y, 52), a)
    });
    check("layer_norm wrt gain", &gain0, &|tape, x| {
        let a = tape.leaf(Tensor::from_vec(&[3, 4], x0.clone()).unwrap());
        let g = tape.leaf(Tensor::from_vec(&[4], x.to_vec()).unwrap());
        let b = tape.leaf(Tensor::from_vec(&[4], bias0.clone()).unwrap());
        let y = tape.layer_norm(a, g, b).unwrap();
        (mix(tape, y, 52), g)
    });
    check("layer_norm wrt bias", &bias0, &|tape, x| {
        let a = tape.leaf(Tensor::from_vec(&[3, 4], x0.clone()).unwrap());
        let g = tape.leaf(Tensor::from_vec(&[4], gain0.clone()).unwrap());
        let b = tape.leaf(Tensor::from_vec(&[4], x.to_vec()).unwrap());
        let y = tape.layer_norm(a, g, b).unwrap();
        (mix(tape, y, 52), b)
    });
}

#[test]
fn causal_attention_gradients() {
    let t = 5;
    let d = 8;
    let heads = 2;
    let mut r = rng(6);
    let q0 = random_vec(t * d, &mut r);
    let k0 = random_vec(t * d, &mut r);
    let v0 = random_vec(t * d, &mut r);

    for (name, which) in [("attention wrt q", 0usize), ("wrt k", 1), ("wrt v", 2)] {
        let base = [q0.clone(), k0.clone(), v0.clone()];
        check(name, &base[which].clone(), &move |tape, x| {
            let mut tensors = base.clone();
            tensors[which] = x.to_vec();
            let q = tape.leaf(Tensor::from_vec(&[t, d], tensors[0].clone()).unwrap());
            let k = tape.leaf(Tensor::from_vec(&[t, d], tensors[1].clone()).unwrap());
            let v = tape.leaf(Tensor::from_vec(&[t, d], tensors[2].clone()).unwrap());
            let y = tape.causal_attention(q, k, v, heads).unwrap();
            let leaf = [q, k, v][which];
            (mix(tape, y, 61), leaf)
        });
    }
}

#[test]
fn loss_gradients() {
    let mut r = rng(7);
    // Keep probabilities well inside the clamp band.
    let p0: Vec<f64> = (0..8).map(|_| r.random_range(0.05..0.95)).collect();
    let targets = Tensor::from_vec(&[8], (0..8).map(|_| r.random_range(0.0..1.0)).collect())
        .unwrap();
    check("mean_bce", &p0, &|tape, x| {
        let p = tape.leaf(Tensor::from_vec(&[8], x.to_vec()).unwrap());
        let loss = tape.mean_bce(p, &targets).unwrap();
        (loss, p)
    });

    let mu0 = random_vec(6, &mut r);
    let lv0 = random_vec(6, &mut r);
    check("kl wrt mean", &mu0, &|tape, x| {
        let mu = tape.leaf(Tensor::from_vec(&[6], x.to_vec()).unwrap());
        let lv = tape.leaf(Tensor::from_vec(&[6], lv0.clone()).unwrap());
        let loss = tape.kl_std_normal(mu, lv).unwrap();
        (loss, mu)
    });
    check("kl wrt logvar", &lv0, &|tape, x| {
        let mu = tape.leaf(Tensor::from_vec(&[6], mu0.clone()).unwrap());
        let lv = tape.leaf(Tensor::from_vec(&[6], x.to_vec()).unwrap());
        let loss = tape.kl_std_normal(mu, lv).unwrap();
        (loss, lv)
    });
}

/// Whole-block check: every parameter of a small pre-norm block, plus the
/// input, against finite differences.
#[test]
fn full_block_gradients() {
    let dim = 8;
    let heads = 2;
    let t = 4;
    let mut r = rng(8);
    let mut params = ParamSet::new();
    init_block_params(&mut params, 0, dim, &mut r);
    let x0 = random_vec(t * dim, &mut r);

    let build = |tape: &mut Tape, params: &ParamSet, x: &[f64]| -> (Var, Vec<Var>) {
        let leaves = params.leaf_all(tape);
        let vars = BlockVars {
            ln1_gain: leaves[0],
            ln1_bias: leaves[1],
            wq: leaves[2],
            wk: leaves[3],
            wv: leaves[4],
            wo: leaves[5],
            ln2_gain: leaves[6],
            ln2_bias: leaves[7],
            ff_w1: leaves[8],
            ff_b1: leaves[9],
            ff_w2: leaves[10],
            ff_b2: leaves[11],
        };
        let input = tape.leaf(Tensor::from_vec(&[t, dim], x.to_vec()).unwrap());
        let out = causal_block(tape, input, &vars, heads).unwrap();
        let loss = mix(tape, out, 81);
        let mut all = leaves;
        all.push(input);
        (loss, all)
    };

    let mut tape = Tape::new();
    let (loss, leaves) = build(&mut tape, &params, &x0);
    let grads = tape.backward(loss).unwrap();

    // Gradient of every parameter tensor.
    for (pi, (name, tensor)) in params.iter().enumerate() {
        let f = |v: &[f64]| -> f64 {
            let mut perturbed = params.clone();
            for (i, (_, t)) in perturbed.iter_mut().enumerate() {
                if i == pi {
                    t.data_mut().copy_from_slice(v);
                }
            }
            let mut tape = Tape::new();
            let (loss, _) = build(&mut tape, &perturbed, &x0);
            tape.value(loss).item()
        };
        assert_close(
            &format!("block param {name}"),
            grads.wrt(leaves[pi]).data(),
            &finite_diff(&f, tensor.data()),
        );
    }

    // Gradient of the input.
    let f = |v: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let (loss, _) = build(&mut tape, &params, v);
        tape.value(loss).item()
    };
    assert_close(
        "block input",
        grads.wrt(*leaves.last().unwrap()).data(),
        &finite_diff(&f, &x0),
    );
}

#[test]
fn block_output_is_causal_bitwise() {
    let dim = 8;
    let heads = 2;
    let t = 6;
    let mut r = rng(9);
    let mut params = ParamSet::new();
    init_block_params(&mut params, 0, dim, &mut r);
    let x0 = random_vec(t * dim, &mut r);

    let run = |x: &[f64]| -> Vec<f64> {
        let mut tape = Tape::new();
        let leaves = params.leaf_all(&mut tape);
        let vars = BlockVars {
            ln1_gain: leaves[0],
            ln1_bias: leaves[1],
            wq: leaves[2],
            wk: leaves[3],
            wv: leaves[4],
            wo: leaves[5],
            ln2_gain: leaves[6],
            ln2_bias: leaves[7],
            ff_w1: leaves[8],
            ff_b1: leaves[9],
            ff_w2: leaves[10],
            ff_b2: leaves[11],
        };
        let input = tape.leaf(Tensor::from_vec(&[t, dim], x.to_vec()).unwrap());
        let out = causal_block(&mut tape, input, &vars, heads).unwrap();
        tape.value(out).data().to_vec()
    };

    let base = run(&x0);
    for trial in 0..10 {
        let pos = 1 + (trial % (t - 1));
        let mut x = x0.clone();
        x[pos * dim] += 0.5;
        let perturbed = run(&x);
        // Rows before the perturbed position are bit-identical.
        assert_eq!(
            &base[..pos * dim],
            &perturbed[..pos * dim],
            "future leaked into position < {pos}"
        );
        // The perturbed row itself must change.
        assert_ne!(&base[pos * dim..(pos + 1) * dim], &perturbed[pos * dim..(pos + 1) * dim]);
    }
}

#[test]
fn single_position_attention_is_identity_on_v() {
    let mut tape = Tape::new();
    let q = tape.leaf(Tensor::from_vec(&[1, 4], vec![0.3, -0.2, 0.9, 0.0]).unwrap());
    let k = tape.leaf(Tensor::from_vec(&[1, 4], vec![1.0, 2.0, -1.0, 0.5]).unwrap());
    let v = tape.leaf(Tensor::from_vec(&[1, 4], vec![4.0, 5.0, 6.0, 7.0]).unwrap());
    let out = tape.causal_attention(q, k, v, 2).unwrap();
    // With one position the only attention weight is 1.
    assert_eq!(tape.value(out).data(), &[4.0, 5.0, 6.0, 7.0]);
}

#[test]
fn softmax_rows_sum_to_one_and_are_nonnegative() {
    let mut r = rng(10);
    for _ in 0..50 {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[4, 7], random_vec(28, &mut r)).unwrap());
        let y = tape.softmax_rows(x);
        let data = tape.value(y).data();
        for row in 0..4 {
            let sum: f64 = data[row * 7..(row + 1) * 7].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(data[row * 7..(row + 1) * 7].iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn bce_at_half_is_ln_two() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::from_vec(&[4], vec![0.5; 4]).unwrap());
    let t = Tensor::from_vec(&[4], vec![0.5; 4]).unwrap();
    let loss = tape.mean_bce(p, &t).unwrap();
    assert!((tape.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn forward_is_deterministic() {
    let mut r = rng(11);
    let mut params = ParamSet::new();
    init_block_params(&mut params, 0, 8, &mut r);
    let x = random_vec(4 * 8, &mut r);

    let run = || -> Vec<f64> {
        let mut tape = Tape::new();
        let leaves = params.leaf_all(&mut tape);
        let vars = BlockVars {
            ln1_gain: leaves[0],
            ln1_bias: leaves[1],
            wq: leaves[2],
            wk: leaves[3],
            wv: leaves[4],
            wo: leaves[5],
            ln2_gain: leaves[6],
            ln2_bias: leaves[7],
            ff_w1: leaves[8],
            ff_b1: leaves[9],
            ff_w2: leaves[10],
            ff_b2: leaves[11],
        };
        let input = tape.leaf(Tensor::from_vec(&[4, 8], x.clone()).unwrap());
        let out = causal_block(&mut tape, input, &vars, 2).unwrap();
        tape.value(out).data().to_vec()
    };
    assert_eq!(run(), run());
}
