//! Shared oracles for integration tests: central finite differences and
//! randomized op instances. These deliberately avoid the tape's backward
//! path so they stay independent of what they check.

use gossipgan::tensor::{forward_op, OpAttrs, OpKind, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central finite differences of a scalar function.
pub fn fd_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

/// Normalized infinity-norm relative error between two gradients.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1e-8);
    diff / scale
}

/// One randomized test instance of an op kind: input shapes/values, attrs,
/// and which inputs to differentiate.
pub struct OpInstance {
    pub inputs: Vec<(Vec<usize>, Vec<f64>)>,
    pub attrs: OpAttrs,
    pub diff_inputs: Vec<usize>,
}

fn smooth_vals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
}

/// Values bounded away from zero, for kinked ops (relu family).
fn offset_vals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.5);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn positive_vals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.1..2.0)).collect()
}

pub fn op_instance(kind: OpKind, rng: &mut ChaCha8Rng) -> OpInstance {
    let mut attrs = OpAttrs::default();
    let (inputs, diff_inputs): (Vec<(Vec<usize>, Vec<f64>)>, Vec<usize>) = match kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let shape = vec![2, 3, 2];
            let a = smooth_vals(rng, 12);
            let b = smooth_vals(rng, 12);
            (vec![(shape.clone(), a), (shape, b)], vec![0, 1])
        }
        OpKind::ScalarMul => {
            attrs.scalar = rng.random_range(-2.0..2.0);
            (vec![(vec![3, 2], smooth_vals(rng, 6))], vec![0])
        }
        OpKind::Matmul => {
            let (m, k, n) = (3, 4, 2);
            (
                vec![(vec![m, k], smooth_vals(rng, m * k)), (vec![k, n], smooth_vals(rng, k * n))],
                vec![0, 1],
            )
        }
        OpKind::Conv2d => {
            attrs.stride = rng.random_range(1..=2);
            attrs.padding = rng.random_range(0..=1);
            let x = (vec![2, 2, 4, 4], smooth_vals(rng, 64));
            let w = (vec![2, 2, 3, 3], smooth_vals(rng, 36));
            let b = (vec![2], smooth_vals(rng, 2));
            (vec![x, w, b], vec![0, 1, 2])
        }
        OpKind::ConvTranspose2d => {
            attrs.stride = rng.random_range(1..=2);
            attrs.padding = rng.random_range(0..=1);
            let x = (vec![2, 2, 3, 3], smooth_vals(rng, 36));
            let w = (vec![2, 2, 3, 3], smooth_vals(rng, 36));
            let b = (vec![2], smooth_vals(rng, 2));
            (vec![x, w, b], vec![0, 1, 2])
        }
        OpKind::BatchNorm => {
            attrs.train = true;
            let x = (vec![3, 2, 2, 2], smooth_vals(rng, 24));
            let gamma = (vec![2], positive_vals(rng, 2));
            let beta = (vec![2], smooth_vals(rng, 2));
            (vec![x, gamma, beta], vec![0, 1, 2])
        }
        OpKind::Dropout => {
            attrs.prob = 0.4;
            attrs.seed = rng.random();
            (vec![(vec![4, 4], smooth_vals(rng, 16))], vec![0])
        }
        OpKind::Relu | OpKind::LeakyRelu => {
            attrs.slope = 0.2;
            (vec![(vec![3, 4], offset_vals(rng, 12))], vec![0])
        }
        OpKind::Tanh => (vec![(vec![3, 4], smooth_vals(rng, 12))], vec![0]),
        OpKind::Mean | OpKind::Sum => {
            attrs.axes = if rng.random::<bool>() { Some(vec![0, 2]) } else { None };
            (vec![(vec![2, 3, 2], smooth_vals(rng, 12))], vec![0])
        }
        OpKind::L2Norm => {
            attrs.axes = Some(vec![1]);
            (vec![(vec![3, 4], offset_vals(rng, 12))], vec![0])
        }
        OpKind::Upsample2 => (vec![(vec![2, 2, 2, 2], smooth_vals(rng, 16))], vec![0]),
        OpKind::AvgPool2 => (vec![(vec![2, 2, 4, 4], smooth_vals(rng, 64))], vec![0]),
        OpKind::Reshape => {
            attrs.shape = Some(vec![4, 3]);
            (vec![(vec![2, 6], smooth_vals(rng, 12))], vec![0])
        }
        OpKind::Concat => {
            attrs.axis = 1;
            let a = (vec![2, 2], smooth_vals(rng, 4));
            let b = (vec![2, 3], smooth_vals(rng, 6));
            (vec![a, b], vec![0, 1])
        }
    };
    OpInstance { inputs, attrs, diff_inputs }
}

/// Run the instance: loss = Σ w·op(inputs), with a fixed random weighting so
/// every output element influences the scalar.
pub fn instance_loss(tape: &Tape, kind: OpKind, inst: &OpInstance, leaves: &[Tensor], weights: &[f64]) -> f64 {
    let refs: Vec<&Tensor> = leaves.iter().collect();
    let y = forward_op(tape, kind, &refs, &inst.attrs).expect("forward");
    let w = Tensor::from_vec(y.shape(), weights.to_vec()).expect("weights");
    tape.mul(&y, &w).and_then(|p| tape.sum_all(&p)).expect("loss").scalar().expect("scalar")
}

/// Loss + tape handle on a recording tape (AD path).
pub fn instance_loss_attached(
    kind: OpKind,
    inst: &OpInstance,
    weights: &[f64],
) -> (Tape, Vec<Tensor>, Tensor) {
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inst
        .inputs
        .iter()
        .map(|(shape, vals)| tape.leaf(&Tensor::from_vec(shape, vals.clone()).expect("input")))
        .collect();
    let refs: Vec<&Tensor> = leaves.iter().collect();
    let y = forward_op(&tape, kind, &refs, &inst.attrs).expect("forward");
    let w = Tensor::from_vec(y.shape(), weights.to_vec()).expect("weights");
    let loss = tape.mul(&y, &w).and_then(|p| tape.sum_all(&p)).expect("loss");
    (tape, leaves, loss)
}

/// Output element count for weighting, computed by a dry run.
pub fn output_len(kind: OpKind, inst: &OpInstance) -> usize {
    let tape = Tape::inference();
    let tensors: Vec<Tensor> =
        inst.inputs.iter().map(|(s, v)| Tensor::from_vec(s, v.clone()).expect("input")).collect();
    let refs: Vec<&Tensor> = tensors.iter().collect();
    forward_op(&tape, kind, &refs, &inst.attrs).expect("forward").numel()
}

/// First-order check of one randomized instance of `kind`; returns the worst
/// relative error over all differentiable inputs.
pub fn fd_check_op(kind: OpKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = op_instance(kind, &mut rng);
    let weights: Vec<f64> = (0..output_len(kind, &inst)).map(|_| rng.random_range(-1.0..1.0)).collect();

    let (tape, leaves, loss) = instance_loss_attached(kind, &inst, &weights);
    let refs: Vec<&Tensor> = inst.diff_inputs.iter().map(|&i| &leaves[i]).collect();
    let grads = tape.backward(&loss, &refs, false).expect("backward");

    let mut worst: f64 = 0.0;
    for (slot, &input_idx) in inst.diff_inputs.iter().enumerate() {
        let base = inst.inputs[input_idx].1.clone();
        let mut f = |vals: &[f64]| {
            let mut probe = inst.clone_inputs();
            probe[input_idx].1 = vals.to_vec();
            let tape = Tape::inference();
            let tensors: Vec<Tensor> =
                probe.iter().map(|(s, v)| Tensor::from_vec(s, v.clone()).expect("input")).collect();
            instance_loss(&tape, kind, &inst, &tensors, &weights)
        };
        let fd = fd_grad(&mut f, &base, 1e-5);
        worst = worst.max(rel_err(grads[slot].data(), &fd));
    }
    worst
}

impl OpInstance {
    pub fn clone_inputs(&self) -> Vec<(Vec<usize>, Vec<f64>)> {
        self.inputs.clone()
    }
}
