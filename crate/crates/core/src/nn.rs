//! Model parameters and layers shared by the autoencoder and the GAN.
//!
//! A [`ParamVector`] is the unit of exchange everywhere: a flat, ordered,
//! named list of real arrays. Layers register their entries in a vector at
//! build time and address them by index; a [`Forward`] binds the current
//! values onto a tape (trainable entries as leaves when gradients are
//! wanted) for one pass.

use crate::seeds;
use crate::tensor::{Result as TensorResult, Tape, Tensor, TensorError};
use rand::Rng;
use sha2::{Digest, Sha256};
use std::cell::RefCell;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("parameter vectors are incompatible: {0}")]
    Incompatible(String),
    #[error("empty parameter list")]
    Empty,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub trainable: bool,
}

/// Flat, ordered, named collection of model parameters. Non-trainable
/// entries carry layer state (batch-norm running statistics); they ride
/// along in checkpoints and merges but are invisible to the optimizer and
/// to parameter counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamVector {
    entries: Vec<ParamEntry>,
}

impl ParamVector {
    pub fn new() -> ParamVector {
        ParamVector { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>, trainable: bool) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.entries.push(ParamEntry { name: name.into(), shape, values, trainable });
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, idx: usize) -> &ParamEntry {
        &self.entries[idx]
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut ParamEntry {
        &mut self.entries[idx]
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Count of trainable scalars (what "model size" means throughout).
    pub fn param_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.values.len()).sum()
    }

    /// Checkpoint-convention storage cost: 4 bytes per trainable scalar.
    pub fn memory_bytes(&self) -> u64 {
        4 * self.param_count() as u64
    }

    pub fn trainable_indices(&self) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].trainable).collect()
    }

    fn compatible(&self, other: &ParamVector) -> std::result::Result<(), ParamError> {
        if self.entries.len() != other.entries.len() {
            return Err(ParamError::Incompatible(format!(
                "{} vs {} entries",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.shape != b.shape {
                return Err(ParamError::Incompatible(format!("entry {} vs {}", a.name, b.name)));
            }
        }
        Ok(())
    }

    /// Elementwise mean over uniformly shaped vectors.
    pub fn average(vectors: &[&ParamVector]) -> std::result::Result<ParamVector, ParamError> {
        let first = *vectors.first().ok_or(ParamError::Empty)?;
        for v in &vectors[1..] {
            first.compatible(v)?;
        }
        let scale = 1.0 / vectors.len() as f64;
        let mut out = first.clone();
        for (idx, entry) in out.entries.iter_mut().enumerate() {
            for v in &vectors[1..] {
                for (acc, x) in entry.values.iter_mut().zip(&v.entries[idx].values) {
                    *acc += x;
                }
            }
            for acc in entry.values.iter_mut() {
                *acc *= scale;
            }
        }
        Ok(out)
    }

    /// Replace this vector's values with `src`'s, which must have the same
    /// entry names, shapes and flags (e.g. values restored from a
    /// checkpoint into a freshly built model).
    pub fn replace_values(&mut self, src: &ParamVector) -> std::result::Result<(), ParamError> {
        self.compatible(src)?;
        for (dst, s) in self.entries.iter_mut().zip(&src.entries) {
            if dst.trainable != s.trainable {
                return Err(ParamError::Incompatible(format!("trainable flag differs on {}", dst.name)));
            }
            dst.values = s.values.clone();
        }
        Ok(())
    }

    /// Hex digest over names, shapes and exact f64 payloads.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            h.update([0u8]);
            for d in &e.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &e.values {
                h.update(v.to_le_bytes());
            }
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Fan-in-scaled uniform init: U(±1/√fan_in).
pub fn uniform_fan_in(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: current parameter values bound to a tape, plus the
/// running-stat writes produced along the way. A single binding may serve
/// several passes (the dropout-pair runs the discriminator twice against
/// the same leaves).
pub struct Forward<'a> {
    pub tape: &'a Tape,
    pub mode: Mode,
    bound: Vec<Tensor>,
    trainable: Vec<usize>,
    state_updates: RefCell<Vec<(usize, Vec<f64>)>>,
}

impl<'a> Forward<'a> {
    /// Bind `params` onto `tape`. With `grad`, trainable entries become tape
    /// leaves; everything else is a detached constant.
    pub fn new(tape: &'a Tape, params: &ParamVector, grad: bool, mode: Mode) -> Forward<'a> {
        let mut bound = Vec::with_capacity(params.entries().len());
        for e in params.entries() {
            let t = Tensor::from_vec(&e.shape, e.values.clone()).expect("stored params are valid");
            if grad && e.trainable {
                bound.push(tape.leaf(&t));
            } else {
                bound.push(t);
            }
        }
        Forward {
            tape,
            mode,
            bound,
            trainable: params.trainable_indices(),
            state_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn param(&self, idx: usize) -> &Tensor {
        &self.bound[idx]
    }

    /// Leaves to differentiate, in trainable-entry order.
    pub fn trainable_leaves(&self) -> Vec<&Tensor> {
        self.trainable.iter().map(|&i| &self.bound[i]).collect()
    }

    pub(crate) fn record_state(&self, idx: usize, values: Vec<f64>) {
        self.state_updates.borrow_mut().push((idx, values));
    }

    /// Write the pass's running-statistic updates back into `params`.
    pub fn apply_state(&self, params: &mut ParamVector) {
        for (idx, values) in self.state_updates.borrow_mut().drain(..) {
            params.entry_mut(idx).values = values;
        }
    }
}

/// Per-pass dropout seed stream: layer call `i` masks with a seed derived
/// from the pass's base seed. `None` (or probability zero) disables masking.
#[derive(Clone, Copy, Debug)]
pub struct DropoutStream {
    pub prob: f64,
    pub base_seed: u64,
}

impl DropoutStream {
    pub fn mask_seed(&self, layer_index: u64) -> u64 {
        seeds::derive(self.base_seed, "dropout-layer", layer_index)
    }
}

#[derive(Clone)]
pub struct Conv2d {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    pub fn new(
        pv: &mut ParamVector,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Conv2d {
        let fan_in = cin * k * k;
        let w = pv.push(
            format!("{name}.w"),
            vec![cout, cin, k, k],
            uniform_fan_in(rng, fan_in, cout * cin * k * k),
            true,
        );
        let b = pv.push(format!("{name}.b"), vec![cout], vec![0.0; cout], true);
        Conv2d { w, b, stride, pad }
    }

    pub fn forward(&self, fw: &Forward, x: &Tensor) -> TensorResult<Tensor> {
        fw.tape.conv2d(x, fw.param(self.w), Some(fw.param(self.b)), self.stride, self.pad)
    }
}

#[derive(Clone)]
pub struct ConvTranspose2d {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

impl ConvTranspose2d {
    pub fn new(
        pv: &mut ParamVector,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> ConvTranspose2d {
        let fan_in = cin * k * k;
        let w = pv.push(
            format!("{name}.w"),
            vec![cin, cout, k, k],
            uniform_fan_in(rng, fan_in, cin * cout * k * k),
            true,
        );
        let b = pv.push(format!("{name}.b"), vec![cout], vec![0.0; cout], true);
        ConvTranspose2d { w, b, stride, pad }
    }

    pub fn forward(&self, fw: &Forward, x: &Tensor) -> TensorResult<Tensor> {
        fw.tape.conv_transpose2d(x, fw.param(self.w), Some(fw.param(self.b)), self.stride, self.pad)
    }
}

#[derive(Clone)]
pub struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new(pv: &mut ParamVector, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Linear {
        let w = pv.push(format!("{name}.w"), vec![fan_out, fan_in], uniform_fan_in(rng, fan_in, fan_out * fan_in), true);
        let b = pv.push(format!("{name}.b"), vec![fan_out], vec![0.0; fan_out], true);
        Linear { w, b }
    }

    pub fn forward(&self, fw: &Forward, x: &Tensor) -> TensorResult<Tensor> {
        fw.tape.linear(x, fw.param(self.w), Some(fw.param(self.b)))
    }
}

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Batch normalization over (B,C,H,W) or (B,F). Running statistics are
/// retained with momentum 0.9 and epsilon 1e-5; evaluation mode uses them
/// as fixed constants.
#[derive(Clone)]
pub struct BatchNorm {
    gamma: usize,
    beta: usize,
    rmean: usize,
    rvar: usize,
}

impl BatchNorm {
    pub fn new(pv: &mut ParamVector, name: &str, channels: usize) -> BatchNorm {
        let gamma = pv.push(format!("{name}.gamma"), vec![channels], vec![1.0; channels], true);
        let beta = pv.push(format!("{name}.beta"), vec![channels], vec![0.0; channels], true);
        let rmean = pv.push(format!("{name}.running_mean"), vec![channels], vec![0.0; channels], false);
        let rvar = pv.push(format!("{name}.running_var"), vec![channels], vec![1.0; channels], false);
        BatchNorm { gamma, beta, rmean, rvar }
    }

    pub fn forward(&self, fw: &Forward, x: &Tensor) -> TensorResult<Tensor> {
        match fw.mode {
            Mode::Train => {
                let (y, mean, var) =
                    fw.tape.batch_norm_train(x, fw.param(self.gamma), fw.param(self.beta), BN_EPS)?;
                let old_mean = fw.param(self.rmean).data();
                let old_var = fw.param(self.rvar).data();
                let new_mean: Vec<f64> = old_mean
                    .iter()
                    .zip(&mean)
                    .map(|(o, m)| BN_MOMENTUM * o + (1.0 - BN_MOMENTUM) * m)
                    .collect();
                let new_var: Vec<f64> = old_var
                    .iter()
                    .zip(&var)
                    .map(|(o, v)| BN_MOMENTUM * o + (1.0 - BN_MOMENTUM) * v)
                    .collect();
                fw.record_state(self.rmean, new_mean);
                fw.record_state(self.rvar, new_var);
                Ok(y)
            }
            Mode::Eval => fw.tape.batch_norm_eval(
                x,
                fw.param(self.gamma),
                fw.param(self.beta),
                fw.param(self.rmean),
                fw.param(self.rvar),
                BN_EPS,
            ),
        }
    }
}

/// Adam with bias correction; state is kept per trainable entry.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamVector, lr: f64) -> Adam {
        let sizes: Vec<usize> =
            params.trainable_indices().iter().map(|&i| params.entry(i).values.len()).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// Apply one step. `grads` aligns with the trainable entries of `params`.
    pub fn step(&mut self, params: &mut ParamVector, grads: &[Tensor]) -> TensorResult<()> {
        let idxs = params.trainable_indices();
        if grads.len() != idxs.len() {
            return Err(TensorError::InvalidArg {
                op: "adam",
                detail: format!("{} grads for {} trainable entries", grads.len(), idxs.len()),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, (&idx, grad)) in idxs.iter().zip(grads).enumerate() {
            let entry = params.entry_mut(idx);
            if grad.numel() != entry.values.len() {
                return Err(TensorError::InvalidArg {
                    op: "adam",
                    detail: format!("grad size {} vs entry {}", grad.numel(), entry.values.len()),
                });
            }
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for ((w, &g), (mi, vi)) in
                entry.values.iter_mut().zip(grad.data()).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
