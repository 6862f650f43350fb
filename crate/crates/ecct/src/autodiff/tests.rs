use super::*;
use crate::rng::{purpose, RngStream};

fn rng(tag: u64) -> RngStream {
    RngStream::new(7, [purpose::TEST, tag, 0, 0])
}

fn check<F>(tag: u64, shapes: &[&[usize]], build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AdError>,
{
    let mut r = rng(tag);
    let params: Vec<Tensor<f64>> =
        shapes.iter().map(|s| random_tensor(s, &mut r)).collect();
    let report = grad_check(build, &params, 1e-5, 300, &mut r).unwrap();
    report.max_rel_err
}

/// Reduce any tensor to a scalar with fixed random-ish weights so every
/// element influences the loss.
fn spread_sum<T: Scalar>(g: &mut Graph<T>, v: Var) -> Result<Var, AdError> {
    let n = g.value(v).numel();
    let shape = g.value(v).shape().to_vec();
    let weights: Vec<T> = (0..n)
        .map(|i| T::of_f64(0.3 + 0.11 * ((i * 7919 + 13) % 17) as f64))
        .collect();
    let w = g.constant(Tensor::from_vec(&shape, weights));
    let prod = g.mul(v, w)?;
    g.sum_all(prod)
}

#[test]
fn matmul_grad() {
    let err = check(1, &[&[3, 4], &[4, 5]], |g, p| {
        let y = g.matmul(p[0], p[1])?;
        spread_sum(g, y)
    });
    assert!(err < 1e-6, "matmul rel err {err}");
}

#[test]
fn add_mul_scale_grad() {
    let err = check(2, &[&[4, 3], &[4, 3]], |g, p| {
        let s = g.add(p[0], p[1])?;
        let m = g.mul(s, p[0])?;
        let sc = g.scale(m, 1.7_f64)?;
        spread_sum(g, sc)
    });
    assert!(err < 1e-6, "add/mul/scale rel err {err}");
}

#[test]
fn bias_and_tiled_grad() {
    let err = check(3, &[&[6, 3], &[3], &[2, 3]], |g, p| {
        let b = g.add_bias(p[0], p[1])?;
        let t = g.add_tiled(b, p[2])?;
        spread_sum(g, t)
    });
    assert!(err < 1e-6, "add_bias/add_tiled rel err {err}");
}

#[test]
fn concat_slice_transpose_grad() {
    let err = check(4, &[&[3, 2], &[3, 4], &[2, 6]], |g, p| {
        let c = g.concat(&[p[0], p[1]], 1)?; // (3, 6)
        let r = g.concat(&[c, p[2]], 0)?; // (5, 6)
        let s = g.slice_cols(r, 1, 4)?; // (5, 4)
        let t = g.transpose(s)?; // (4, 5)
        spread_sum(g, t)
    });
    assert!(err < 1e-6, "concat/slice/transpose rel err {err}");
}

#[test]
fn concat_blocks_grad() {
    // Batch of 2: a has 3-row blocks, b has 2-row blocks.
    let err = check(5, &[&[6, 3], &[4, 3]], |g, p| {
        let c = g.concat_blocks(p[0], p[1], 3, 2)?; // (10, 3)
        spread_sum(g, c)
    });
    assert!(err < 1e-6, "concat_blocks rel err {err}");
}

#[test]
fn gelu_grad() {
    let err = check(6, &[&[5, 4]], |g, p| {
        let sc = g.scale(p[0], 2.5_f64)?; // widen the input range
        let y = g.gelu(sc)?;
        spread_sum(g, y)
    });
    assert!(err < 1e-5, "gelu rel err {err}");
}

#[test]
fn layer_norm_grad() {
    let err = check(7, &[&[5, 8], &[8], &[8]], |g, p| {
        let y = g.layer_norm(p[0], p[1], p[2])?;
        spread_sum(g, y)
    });
    assert!(err < 1e-5, "layer_norm rel err {err}");
}

#[test]
fn softmax_grad_and_rows() {
    let err = check(8, &[&[4, 6]], |g, p| {
        let s = g.scale(p[0], 3.0_f64)?;
        let y = g.softmax(s)?;
        spread_sum(g, y)
    });
    assert!(err < 1e-5, "softmax rel err {err}");

    let mut g: Graph<f64> = Graph::new();
    let mut r = rng(80);
    let x = random_tensor::<f64>(&[7, 9], &mut r);
    let v = g.constant(x);
    let s = g.softmax(v).unwrap();
    for row in 0..7 {
        let sum: f64 = g.value(s).data()[row * 9..(row + 1) * 9].iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "row {row} sums to {sum}");
        assert!(g.value(s).data()[row * 9..(row + 1) * 9].iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn softmax_masked_zeroes_forbidden_positions() {
    let mut g: Graph<f64> = Graph::new();
    let logits = g.constant(Tensor::from_vec(&[2, 3], vec![0.3, -0.2, 1.0, 0.5, 0.1, -0.4]));
    let sentinel = f64::mask_sentinel();
    let mask = g.constant(Tensor::from_vec(&[2, 3], vec![0.0, sentinel, 0.0, 0.0, 0.0, sentinel]));
    let s = g.softmax_masked(logits, mask).unwrap();
    let d = g.value(s).data();
    assert!(d[1] < 1e-30 && d[5] < 1e-30, "masked weights {} {}", d[1], d[5]);
    assert!((d[0] + d[2] - 1.0).abs() < 1e-12);
    assert!(g.value(s).all_finite());
}

#[test]
fn sigmoid_grad() {
    let err = check(9, &[&[3, 5]], |g, p| {
        let y = g.sigmoid(p[0])?;
        spread_sum(g, y)
    });
    assert!(err < 1e-6, "sigmoid rel err {err}");
}

#[test]
fn bce_grad_and_stability() {
    let err = check(10, &[&[4, 3]], |g, p| {
        let targets =
            g.constant(Tensor::from_vec(&[4, 3], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.5, 0.25, 0.75, 1.0, 0.0, 1.0]));
        g.bce_with_logits(p[0], targets)
    });
    assert!(err < 1e-6, "bce rel err {err}");

    // Large logits stay finite in forward and backward.
    for &l in &[-1e4_f64, -50.0, 0.0, 50.0, 1e4] {
        let mut g: Graph<f64> = Graph::new();
        let logits = g.leaf(Tensor::from_vec(&[2], vec![l, -l]), true);
        let targets = g.constant(Tensor::from_vec(&[2], vec![1.0, 0.0]));
        let loss = g.bce_with_logits(logits, targets).unwrap();
        assert!(g.value(loss).item().is_finite(), "loss at logit {l}");
        g.backward(loss).unwrap();
        assert!(g.grad(logits).all_finite(), "grad at logit {l}");
    }
}

#[test]
fn seq_linear_grad() {
    // Batch of 3 blocks of 4 rows, projected to 2 rows each.
    let err = check(11, &[&[2, 4], &[12, 3]], |g, p| {
        let y = g.seq_linear(p[0], p[1], 4)?; // (6, 3)
        spread_sum(g, y)
    });
    assert!(err < 1e-6, "seq_linear rel err {err}");
}

#[test]
fn batched_matmul_grad() {
    let err = check(12, &[&[6, 4], &[8, 4]], |g, p| {
        // 2 blocks: scores (3x4 per block, nt) then values (nn).
        let scores = g.batched_matmul_nt(p[0], p[1], 3, 4)?; // (6, 4)
        let soft = g.softmax(scores)?;
        let out = g.batched_matmul_nn(soft, p[1], 3, 4)?; // (6, 4)
        spread_sum(g, out)
    });
    assert!(err < 1e-5, "batched attention rel err {err}");
}

#[test]
fn embed_scale_grad() {
    // 2 samples of length 5 embedded into dimension 3.
    let err = check(13, &[&[10], &[5, 3]], |g, p| {
        let y = g.embed_scale(p[0], p[1])?; // (10, 3)
        spread_sum(g, y)
    });
    assert!(err < 1e-6, "embed_scale rel err {err}");
}

#[test]
fn reused_var_accumulates() {
    // loss = sum(x * x) => grad = 2x exactly.
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(Tensor::from_vec(&[3], vec![0.5, -1.25, 2.0]), true);
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum_all(sq).unwrap();
    g.backward(loss).unwrap();
    let grad = g.grad(x);
    for (gv, xv) in grad.data().iter().zip([0.5, -1.25, 2.0]) {
        assert!((gv - 2.0 * xv).abs() < 1e-12, "grad {gv} vs {}", 2.0 * xv);
    }
}

#[test]
fn tape_consumed_and_scalar_checks() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]), true);
    assert_eq!(g.backward(x), Err(AdError::NotScalar));
    let t = g.constant(Tensor::from_vec(&[2], vec![1.0, 0.0]));
    let loss = g.bce_with_logits(x, t).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.backward(loss), Err(AdError::TapeConsumed));
}

#[test]
fn disconnected_grad_is_zero() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]), true);
    let unused = g.leaf(Tensor::from_vec(&[3], vec![1.0; 3]), true);
    let t = g.constant(Tensor::from_vec(&[2], vec![1.0, 0.0]));
    let loss = g.bce_with_logits(x, t).unwrap();
    g.backward(loss).unwrap();
    assert!(g.grad(unused).data().iter().all(|&v| v == 0.0));
}

#[test]
fn finite_difference_eps_sweep() {
    // The error curve over eps is U-shaped: truncation error dominates for
    // large eps, roundoff for tiny eps; a mid-range eps must beat both ends.
    let build = |g: &mut Graph<f64>, p: &[Var]| {
        let y = g.gelu(p[0])?;
        let ln = {
            let gain = g.constant(Tensor::from_vec(&[4], vec![1.0; 4]));
            let bias = g.constant(Tensor::from_vec(&[4], vec![0.0; 4]));
            g.layer_norm(y, gain, bias)?
        };
        spread_sum(g, ln)
    };
    let mut r = rng(14);
    let params = vec![random_tensor::<f64>(&[3, 4], &mut r)];
    let err_at = |eps: f64| {
        let mut rr = rng(15);
        grad_check(build, &params, eps, 12, &mut rr).unwrap().max_rel_err
    };
    let coarse = err_at(1e-1);
    let good = err_at(1e-5);
    let tiny = err_at(1e-12);
    assert!(good < coarse, "good {good} vs coarse {coarse}");
    assert!(good < tiny, "good {good} vs tiny {tiny}");
    assert!(good < 1e-5, "mid-range eps error {good}");
}

#[test]
fn adam_quadratic_converges() {
    // Minimize (x - 3)^2 + (y + 1)^2 with hand-computed gradients.
    let mut params = vec![Tensor::from_vec(&[2], vec![0.0_f64, 0.0])];
    let mut adam = AdamState::new(0.05_f64);
    for _ in 0..2000 {
        let x = params[0].data()[0];
        let y = params[0].data()[1];
        let grads = vec![Tensor::from_vec(&[2], vec![2.0 * (x - 3.0), 2.0 * (y + 1.0)])];
        adam.step(&mut params, &grads);
    }
    assert!((params[0].data()[0] - 3.0).abs() < 1e-3);
    assert!((params[0].data()[1] + 1.0).abs() < 1e-3);
    assert_eq!(adam.steps_taken(), 2000);
}

#[test]
fn adam_first_step_magnitude() {
    // With bias correction the first step is ~lr * sign(g) regardless of
    // gradient scale.
    for &scale in &[1e-3_f64, 1.0, 1e3] {
        let mut params = vec![Tensor::from_vec(&[1], vec![0.0_f64])];
        let mut adam = AdamState::new(0.01_f64);
        let grads = vec![Tensor::from_vec(&[1], vec![scale])];
        adam.step(&mut params, &grads);
        let step = params[0].data()[0];
        assert!(
            (step + 0.01).abs() < 1e-5,
            "first step {step} for gradient scale {scale}"
        );
    }
}

#[test]
fn f32_forward_matches_f64() {
    // The same small attention block in both precisions agrees to f32
    // accuracy.
    let mut r = rng(16);
    let q64 = random_tensor::<f64>(&[4, 8], &mut r);
    let k64 = random_tensor::<f64>(&[4, 8], &mut r);
    let run = |prec32: bool| -> Vec<f64> {
        if prec32 {
            let mut g: Graph<f32> = Graph::new();
            let q = g.constant(q64.map(|v| v as f32));
            let k = g.constant(k64.map(|v| v as f32));
            let s = g.batched_matmul_nt(q, k, 4, 4).unwrap();
            let sm = g.softmax(s).unwrap();
            g.value(sm).data().iter().map(|&v| f64::from(v)).collect()
        } else {
            let mut g: Graph<f64> = Graph::new();
            let q = g.constant(q64.clone());
            let k = g.constant(k64.clone());
            let s = g.batched_matmul_nt(q, k, 4, 4).unwrap();
            let sm = g.softmax(s).unwrap();
            g.value(sm).data().to_vec()
        }
    };
    let (a, b) = (run(true), run(false));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-5, "{x} vs {y}");
    }
}
