//! Gradient oracles for the tensor engine: first-order finite differences
//! per op kind, nested second-order checks for the gradient-penalty shape,
//! and the tape's structural invariants.

mod common;

use common::{fd_check_op, fd_grad, rel_err};
use gossipgan::tensor::{OpKind, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sum_of_squares_gradient() {
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let loss = tape.sum_all(&tape.mul(&x, &x).unwrap()).unwrap();
    let g = tape.backward(&loss, &[&x], false).unwrap();
    assert_eq!(g[0].data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn every_op_kind_matches_finite_differences() {
    // Dev-speed spot check; the acceptance suite runs 100 instances per kind.
    for kind in OpKind::ALL {
        for seed in 0..5 {
            let err = fd_check_op(kind, seed);
            assert!(err < 1e-4, "{} instance {} rel err {:.3e}", kind.name(), seed, err);
        }
    }
}

/// Two-layer tanh network, gradient against central differences.
#[test]
fn tanh_network_gradient_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let w1: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w2: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();

    let run = |w1v: &[f64], w2v: &[f64]| -> f64 {
        let tape = Tape::inference();
        let w1t = Tensor::from_vec(&[4, 3], w1v.to_vec()).unwrap();
        let w2t = Tensor::from_vec(&[1, 4], w2v.to_vec()).unwrap();
        let xt = Tensor::from_vec(&[3, 1], x.clone()).unwrap();
        let h = tape.tanh(&tape.matmul(&w1t, &xt).unwrap()).unwrap();
        tape.sum_all(&tape.matmul(&w2t, &h).unwrap()).unwrap().scalar().unwrap()
    };

    let tape = Tape::new();
    let w1t = tape.leaf(&Tensor::from_vec(&[4, 3], w1.clone()).unwrap());
    let w2t = tape.leaf(&Tensor::from_vec(&[1, 4], w2.clone()).unwrap());
    let xt = Tensor::from_vec(&[3, 1], x.clone()).unwrap();
    let h = tape.tanh(&tape.matmul(&w1t, &xt).unwrap()).unwrap();
    let out = tape.sum_all(&tape.matmul(&w2t, &h).unwrap()).unwrap();
    let grads = tape.backward(&out, &[&w1t, &w2t], false).unwrap();

    let fd1 = fd_grad(&mut |v| run(v, &w2), &w1, 1e-5);
    let fd2 = fd_grad(&mut |v| run(&w1, v), &w2, 1e-5);
    assert!(rel_err(grads[0].data(), &fd1) < 1e-4);
    assert!(rel_err(grads[1].data(), &fd2) < 1e-4);
}

/// Penalty (‖∇_x D(x)‖₂ − 1)² for linear D(x) = w·x: the parameter gradient
/// from double backward must match both the analytic form and finite
/// differences of the analytic first gradient.
#[test]
fn linear_gradient_penalty_parameter_gradient() {
    let w = vec![1.2, -0.7, 2.0];
    let x = vec![0.3, 0.9, -1.1];

    let penalty_of = |wv: &[f64]| -> f64 {
        // analytic first gradient of a linear critic is w itself
        let norm = wv.iter().map(|v| v * v).sum::<f64>().sqrt();
        (norm - 1.0) * (norm - 1.0)
    };

    let tape = Tape::new();
    let wt = tape.leaf(&Tensor::from_vec(&[3], w.clone()).unwrap());
    let xt = tape.leaf(&Tensor::from_vec(&[3], x.clone()).unwrap());
    let score = tape.sum_all(&tape.mul(&wt, &xt).unwrap()).unwrap();
    let gx = tape.backward(&score, &[&xt], true).unwrap().remove(0);
    assert!(gx.is_attached(), "create_graph gradient must stay on the tape");
    let norm = tape.l2_norm_axes(&gx, &[0]).unwrap();
    let shifted = tape.scalar_add(&norm, -1.0).unwrap();
    let pen = tape.mul(&shifted, &shifted).unwrap();
    let grads = tape.backward(&pen, &[&wt], false).unwrap();

    let norm_w = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let analytic: Vec<f64> = w.iter().map(|v| 2.0 * (norm_w - 1.0) * v / norm_w).collect();
    assert!(rel_err(grads[0].data(), &analytic) < 1e-10);

    let fd = fd_grad(&mut |wv| penalty_of(wv), &w, 1e-5);
    assert!(rel_err(grads[0].data(), &fd) < 1e-3);
}

/// Nested second-order check on a small tanh critic: gradient of the
/// gradient-penalty w.r.t. parameters vs finite differences of the
/// AD-computed input-gradient norm.
#[test]
fn tanh_critic_gradient_penalty_double_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dims = (4usize, 3usize); // hidden 4, input 3 -> 4*3 + 4 = 16 params
    let theta: Vec<f64> = (0..dims.0 * dims.1 + dims.0).map(|_| rng.random_range(-0.8..0.8)).collect();
    let xs: Vec<f64> = (0..2 * dims.1).map(|_| rng.random_range(-1.0..1.0)).collect();

    // penalty(theta) computed with first-order AD only (the independent route)
    let penalty = |th: &[f64]| -> f64 {
        let tape = Tape::new();
        let w1 = tape.leaf(&Tensor::from_vec(&[dims.0, dims.1], th[..dims.0 * dims.1].to_vec()).unwrap());
        let w2 = tape.leaf(&Tensor::from_vec(&[1, dims.0], th[dims.0 * dims.1..].to_vec()).unwrap());
        let x = tape.leaf(&Tensor::from_vec(&[2, dims.1], xs.clone()).unwrap());
        let h = tape.tanh(&tape.matmul(&x, &tape.transpose(&w1).unwrap()).unwrap()).unwrap();
        let scores = tape.matmul(&h, &tape.transpose(&w2).unwrap()).unwrap();
        let total = tape.sum_all(&scores).unwrap();
        let gx = tape.backward(&total, &[&x], false).unwrap().remove(0);
        // per-sample norms, then mean penalty
        gx.data()
            .chunks(dims.1)
            .map(|row| {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                (n - 1.0) * (n - 1.0)
            })
            .sum::<f64>()
            / 2.0
    };

    // double-backward route
    let tape = Tape::new();
    let w1 = tape.leaf(&Tensor::from_vec(&[dims.0, dims.1], theta[..dims.0 * dims.1].to_vec()).unwrap());
    let w2 = tape.leaf(&Tensor::from_vec(&[1, dims.0], theta[dims.0 * dims.1..].to_vec()).unwrap());
    let x = tape.leaf(&Tensor::from_vec(&[2, dims.1], xs.clone()).unwrap());
    let h = tape.tanh(&tape.matmul(&x, &tape.transpose(&w1).unwrap()).unwrap()).unwrap();
    let scores = tape.matmul(&h, &tape.transpose(&w2).unwrap()).unwrap();
    let total = tape.sum_all(&scores).unwrap();
    let nodes_before = tape.node_count();
    let gx = tape.backward(&total, &[&x], true).unwrap().remove(0);
    assert!(tape.node_count() > nodes_before, "create_graph must append nodes");
    let norms = tape.l2_norm_axes(&gx, &[1]).unwrap();
    let shifted = tape.scalar_add(&norms, -1.0).unwrap();
    let pen = tape.mean_all(&tape.mul(&shifted, &shifted).unwrap()).unwrap();
    assert!((pen.scalar().unwrap() - penalty(&theta)).abs() < 1e-12);
    let grads = tape.backward(&pen, &[&w1, &w2], false).unwrap();
    let mut ad = grads[0].data().to_vec();
    ad.extend_from_slice(grads[1].data());

    let fd = fd_grad(&mut |th| penalty(th), &theta, 1e-5);
    assert!(rel_err(&ad, &fd) < 1e-3, "rel err {:.3e}", rel_err(&ad, &fd));
}

/// backward(a·f + b·g) == a·backward(f) + b·backward(g)
#[test]
fn backward_is_linear_in_the_loss() {
    let (a, b) = (2.5, -1.25);
    let xv: Vec<f64> = vec![0.4, -0.9, 1.3, 0.2];

    let grad_of = |mix: &dyn Fn(&Tape, &Tensor, &Tensor) -> Tensor| -> Vec<f64> {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::from_vec(&[4], xv.clone()).unwrap());
        let f = tape.sum_all(&tape.mul(&x, &x).unwrap()).unwrap();
        let g = tape.sum_all(&tape.tanh(&x).unwrap()).unwrap();
        let loss = mix(&tape, &f, &g);
        tape.backward(&loss, &[&x], false).unwrap().remove(0).data().to_vec()
    };

    let combined = grad_of(&|t, f, g| {
        t.add(&t.scalar_mul(f, a).unwrap(), &t.scalar_mul(g, b).unwrap()).unwrap()
    });
    let gf = grad_of(&|t, f, _| t.scalar_mul(f, 1.0).unwrap());
    let gg = grad_of(&|t, _, g| t.scalar_mul(g, 1.0).unwrap());
    for i in 0..4 {
        assert!((combined[i] - (a * gf[i] + b * gg[i])).abs() < 1e-12);
    }
}

#[test]
fn unreachable_wrt_gets_zero_gradient() {
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
    let y = tape.leaf(&Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
    let loss = tape.sum_all(&x).unwrap();
    let g = tape.backward(&loss, &[&y], false).unwrap();
    assert_eq!(g[0].data(), &[0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar_and_detached() {
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
    assert!(tape.backward(&x, &[&x], false).is_err());
    let detached = Tensor::from_vec(&[1], vec![1.0]).unwrap();
    let loss = tape.sum_all(&x).unwrap();
    assert!(tape.backward(&loss, &[&detached], false).is_err());
}

/// Identical seeds and inputs must be bit-identical across runs.
#[test]
fn op_evaluation_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::from_vec(&[2, 2, 4, 4], (0..64).map(|_| rng.random()).collect()).unwrap());
        let d = tape.dropout(&x, 0.3, 1234).unwrap();
        let y = tape.avg_pool2(&tape.tanh(&d).unwrap()).unwrap();
        let loss = tape.mean_all(&y).unwrap();
        let g = tape.backward(&loss, &[&x], false).unwrap().remove(0);
        (loss.scalar().unwrap().to_bits(), g.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}
