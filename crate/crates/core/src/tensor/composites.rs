//! Layers-without-state built on the primitives: convolutions via patch
//! gather + batched matmul, batch normalization, seeded dropout, norms, and
//! the string-keyed `forward_op` dispatch used by generic tooling.
//!
//! Because everything here lowers to primitive ops, all composites are
//! differentiable to second order through [`Tape::backward`].

use super::tape::{ConvGeom, Tape};
use super::{Result, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bad(op: &'static str, detail: String) -> TensorError {
    TensorError::InvalidArg { op, detail }
}

fn conv_out(op: &'static str, size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if size + 2 * pad < k || stride == 0 {
        return Err(bad(op, format!("size {size} kernel {k} stride {stride} pad {pad}")));
    }
    Ok((size + 2 * pad - k) / stride + 1)
}

impl Tape {
    /// 2-D convolution. `x` is (B,Cin,H,W), `w` is (Cout,Cin,kh,kw).
    pub fn conv2d(&self, x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(bad("conv2d", format!("input {:?} weight {:?}", xs, ws)));
        }
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        let oh = conv_out("conv2d", h, kh, stride, pad)?;
        let ow = conv_out("conv2d", wd, kw, stride, pad)?;
        let geom = ConvGeom { batch, chans: cin, in_h: h, in_w: wd, k_h: kh, k_w: kw, stride, pad, out_h: oh, out_w: ow };
        let cols = self.gather_patches_geom(x, &geom)?;
        let wmat = self.reshape(w, &[cout, cin * kh * kw])?;
        let y = self.mat_batch_right(&wmat, &cols)?;
        let y = self.reshape(&y, &[batch, cout, oh, ow])?;
        match bias {
            None => Ok(y),
            Some(b) => {
                if b.shape() != [cout] {
                    return Err(bad("conv2d", format!("bias {:?} for {cout} channels", b.shape())));
                }
                let bb = self.broadcast_axes(b, &[batch, cout, oh, ow], &[0, 2, 3])?;
                self.add(&y, &bb)
            }
        }
    }

    /// Transposed 2-D convolution (the adjoint map of `conv2d`): `x` is
    /// (B,Cin,H,W), `w` is (Cin,Cout,kh,kw); output spatial size is
    /// (H−1)·stride − 2·pad + kh.
    pub fn conv_transpose2d(
        &self,
        x: &Tensor,
        w: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] {
            return Err(bad("conv_transpose2d", format!("input {:?} weight {:?}", xs, ws)));
        }
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
        if stride == 0 {
            return Err(bad("conv_transpose2d", "stride 0".into()));
        }
        let oh_signed = (h - 1) * stride + kh;
        let ow_signed = (wd - 1) * stride + kw;
        if oh_signed <= 2 * pad || ow_signed <= 2 * pad {
            return Err(bad("conv_transpose2d", format!("output collapses: pad {pad}")));
        }
        let (oh, ow) = (oh_signed - 2 * pad, ow_signed - 2 * pad);
        let geom = ConvGeom { batch, chans: cout, in_h: oh, in_w: ow, k_h: kh, k_w: kw, stride, pad, out_h: h, out_w: wd };
        let wmat = self.reshape(w, &[cin, cout * kh * kw])?;
        let wt = self.transpose(&wmat)?;
        let xm = self.reshape(x, &[batch, cin, h * wd])?;
        let cols = self.mat_batch_right(&wt, &xm)?;
        let y = self.scatter_patches(&cols, &geom)?;
        match bias {
            None => Ok(y),
            Some(b) => {
                if b.shape() != [cout] {
                    return Err(bad("conv_transpose2d", format!("bias {:?} for {cout} channels", b.shape())));
                }
                let bb = self.broadcast_axes(b, &[batch, cout, oh, ow], &[0, 2, 3])?;
                self.add(&y, &bb)
            }
        }
    }

    /// Training-mode batch norm over (B,C,H,W) or (B,F). Returns the output
    /// plus the biased batch mean/variance per channel, which the caller
    /// folds into its running statistics.
    pub fn batch_norm_train(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        eps: f64,
    ) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
        let axes = norm_axes(x)?;
        let n: usize = axes.iter().map(|&a| x.shape()[a]).product();
        let mu = self.scalar_mul(&self.sum_axes(x, &axes)?, 1.0 / n as f64)?;
        let xc = self.sub(x, &self.broadcast_axes(&mu, x.shape(), &axes)?)?;
        let var = self.scalar_mul(&self.sum_axes(&self.mul(&xc, &xc)?, &axes)?, 1.0 / n as f64)?;
        let rstd = self.recip(&self.sqrt(&self.scalar_add(&var, eps)?)?)?;
        let scale = self.mul(gamma, &rstd)?;
        let y = self.add(
            &self.mul(&xc, &self.broadcast_axes(&scale, x.shape(), &axes)?)?,
            &self.broadcast_axes(beta, x.shape(), &axes)?,
        )?;
        Ok((y, mu.data().to_vec(), var.data().to_vec()))
    }

    /// Evaluation-mode batch norm with fixed running statistics.
    pub fn batch_norm_eval(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        running_mean: &Tensor,
        running_var: &Tensor,
        eps: f64,
    ) -> Result<Tensor> {
        let axes = norm_axes(x)?;
        let xc = self.sub(x, &self.broadcast_axes(&running_mean.detach(), x.shape(), &axes)?)?;
        let rstd = self.recip(&self.sqrt(&self.scalar_add(&running_var.detach(), eps)?)?)?;
        let scale = self.mul(gamma, &rstd)?;
        self.add(
            &self.mul(&xc, &self.broadcast_axes(&scale, x.shape(), &axes)?)?,
            &self.broadcast_axes(beta, x.shape(), &axes)?,
        )
    }

    /// Inverted dropout with an explicit mask seed: survivors are scaled by
    /// 1/(1−p) so evaluation mode is the identity. `p == 0` is a no-op.
    pub fn dropout(&self, x: &Tensor, prob: f64, seed: u64) -> Result<Tensor> {
        if !(0.0..1.0).contains(&prob) {
            return Err(bad("dropout", format!("probability {prob} outside [0,1)")));
        }
        if prob == 0.0 {
            return Ok(x.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep_scale = 1.0 / (1.0 - prob);
        let mask: Vec<f64> =
            (0..x.numel()).map(|_| if rng.random::<f64>() >= prob { keep_scale } else { 0.0 }).collect();
        let mask = Tensor::from_vec(x.shape(), mask)?;
        self.mul(x, &mask)
    }

    /// Two independently masked copies of `x` (the dropout-pair used by the
    /// consistency term).
    pub fn dropout_pair(&self, x: &Tensor, prob: f64, seed_a: u64, seed_b: u64) -> Result<(Tensor, Tensor)> {
        Ok((self.dropout(x, prob, seed_a)?, self.dropout(x, prob, seed_b)?))
    }

    pub fn mean_all(&self, x: &Tensor) -> Result<Tensor> {
        let s = self.sum_all(x)?;
        self.scalar_mul(&s, 1.0 / x.numel() as f64)
    }

    pub fn mean_axes(&self, x: &Tensor, axes: &[usize]) -> Result<Tensor> {
        let n: usize = axes.iter().map(|&a| x.shape().get(a).copied().unwrap_or(0)).product();
        if n == 0 {
            return Err(bad("mean_axes", format!("axes {:?} of {:?}", axes, x.shape())));
        }
        let s = self.sum_axes(x, axes)?;
        self.scalar_mul(&s, 1.0 / n as f64)
    }

    /// Euclidean norm over `axes`: sqrt(Σ x²).
    pub fn l2_norm_axes(&self, x: &Tensor, axes: &[usize]) -> Result<Tensor> {
        let sq = self.mul(x, x)?;
        self.sqrt(&self.sum_axes(&sq, axes)?)
    }

    /// Fully connected layer: `x` (B,F) · `w` (O,F)ᵀ + bias.
    pub fn linear(&self, x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let y = self.matmul(x, &self.transpose(w)?)?;
        match bias {
            None => Ok(y),
            Some(b) => {
                let bb = self.broadcast_axes(b, y.shape(), &[0])?;
                self.add(&y, &bb)
            }
        }
    }
}

fn norm_axes(x: &Tensor) -> Result<Vec<usize>> {
    match x.shape().len() {
        2 => Ok(vec![0]),
        4 => Ok(vec![0, 2, 3]),
        _ => Err(bad("batch_norm", format!("need (B,F) or (B,C,H,W), got {:?}", x.shape()))),
    }
}

/// The supported op vocabulary, keyed by name for generic drivers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    ScalarMul,
    Mul,
    Matmul,
    Conv2d,
    ConvTranspose2d,
    BatchNorm,
    Dropout,
    Relu,
    LeakyRelu,
    Tanh,
    Mean,
    Sum,
    L2Norm,
    Upsample2,
    AvgPool2,
    Reshape,
    Concat,
}

impl OpKind {
    pub const ALL: [OpKind; 19] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::ScalarMul,
        OpKind::Mul,
        OpKind::Matmul,
        OpKind::Conv2d,
        OpKind::ConvTranspose2d,
        OpKind::BatchNorm,
        OpKind::Dropout,
        OpKind::Relu,
        OpKind::LeakyRelu,
        OpKind::Tanh,
        OpKind::Mean,
        OpKind::Sum,
        OpKind::L2Norm,
        OpKind::Upsample2,
        OpKind::AvgPool2,
        OpKind::Reshape,
        OpKind::Concat,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::ScalarMul => "scalar-mul",
            OpKind::Mul => "elementwise-mul",
            OpKind::Matmul => "matmul",
            OpKind::Conv2d => "conv2d",
            OpKind::ConvTranspose2d => "conv-transpose2d",
            OpKind::BatchNorm => "batch-norm",
            OpKind::Dropout => "dropout",
            OpKind::Relu => "relu",
            OpKind::LeakyRelu => "leaky-relu",
            OpKind::Tanh => "tanh",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::L2Norm => "l2-norm",
            OpKind::Upsample2 => "nearest-neighbor-upsample",
            OpKind::AvgPool2 => "average-pool",
            OpKind::Reshape => "reshape",
            OpKind::Concat => "concat",
        }
    }
}

impl std::str::FromStr for OpKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<OpKind> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| TensorError::UnknownKind(s.to_string()))
    }
}

/// Attributes for [`forward_op`]; unused fields are ignored per kind.
#[derive(Clone, Debug)]
pub struct OpAttrs {
    pub scalar: f64,
    pub stride: usize,
    pub padding: usize,
    pub slope: f64,
    pub prob: f64,
    pub seed: u64,
    pub axes: Option<Vec<usize>>,
    pub shape: Option<Vec<usize>>,
    pub axis: usize,
    pub eps: f64,
    pub train: bool,
}

impl Default for OpAttrs {
    fn default() -> Self {
        OpAttrs {
            scalar: 1.0,
            stride: 1,
            padding: 0,
            slope: 0.2,
            prob: 0.5,
            seed: 0,
            axes: None,
            shape: None,
            axis: 0,
            eps: 1e-5,
            train: true,
        }
    }
}

/// Uniform entry point over the op vocabulary. Convolutions take the kernel
/// (and optional bias) as trailing inputs; batch-norm takes gamma/beta and,
/// in evaluation mode, running mean/var.
pub fn forward_op(tape: &Tape, kind: OpKind, inputs: &[&Tensor], attrs: &OpAttrs) -> Result<Tensor> {
    let need = |n: usize| -> Result<()> {
        if inputs.len() == n {
            Ok(())
        } else {
            Err(bad("forward_op", format!("{} expects {} inputs, got {}", kind.name(), n, inputs.len())))
        }
    };
    match kind {
        OpKind::Add => {
            need(2)?;
            tape.add(inputs[0], inputs[1])
        }
        OpKind::Sub => {
            need(2)?;
            tape.sub(inputs[0], inputs[1])
        }
        OpKind::ScalarMul => {
            need(1)?;
            tape.scalar_mul(inputs[0], attrs.scalar)
        }
        OpKind::Mul => {
            need(2)?;
            tape.mul(inputs[0], inputs[1])
        }
        OpKind::Matmul => {
            need(2)?;
            tape.matmul(inputs[0], inputs[1])
        }
        OpKind::Conv2d => match inputs {
            [x, w] => tape.conv2d(x, w, None, attrs.stride, attrs.padding),
            [x, w, b] => tape.conv2d(x, w, Some(b), attrs.stride, attrs.padding),
            _ => Err(bad("forward_op", "conv2d expects (x, w[, bias])".into())),
        },
        OpKind::ConvTranspose2d => match inputs {
            [x, w] => tape.conv_transpose2d(x, w, None, attrs.stride, attrs.padding),
            [x, w, b] => tape.conv_transpose2d(x, w, Some(b), attrs.stride, attrs.padding),
            _ => Err(bad("forward_op", "conv-transpose2d expects (x, w[, bias])".into())),
        },
        OpKind::BatchNorm => match (attrs.train, inputs) {
            (true, [x, gamma, beta]) => Ok(tape.batch_norm_train(x, gamma, beta, attrs.eps)?.0),
            (false, [x, gamma, beta, rm, rv]) => tape.batch_norm_eval(x, gamma, beta, rm, rv, attrs.eps),
            _ => Err(bad("forward_op", "batch-norm expects (x, gamma, beta[, rmean, rvar])".into())),
        },
        OpKind::Dropout => {
            need(1)?;
            tape.dropout(inputs[0], attrs.prob, attrs.seed)
        }
        OpKind::Relu => {
            need(1)?;
            tape.relu(inputs[0])
        }
        OpKind::LeakyRelu => {
            need(1)?;
            tape.leaky_relu(inputs[0], attrs.slope)
        }
        OpKind::Tanh => {
            need(1)?;
            tape.tanh(inputs[0])
        }
        OpKind::Mean => {
            need(1)?;
            match &attrs.axes {
                None => tape.mean_all(inputs[0]),
                Some(axes) => tape.mean_axes(inputs[0], axes),
            }
        }
        OpKind::Sum => {
            need(1)?;
            match &attrs.axes {
                None => tape.sum_all(inputs[0]),
                Some(axes) => tape.sum_axes(inputs[0], axes),
            }
        }
        OpKind::L2Norm => {
            need(1)?;
            let axes = attrs
                .axes
                .clone()
                .unwrap_or_else(|| (0..inputs[0].shape().len()).collect());
            tape.l2_norm_axes(inputs[0], &axes)
        }
        OpKind::Upsample2 => {
            need(1)?;
            tape.upsample2(inputs[0])
        }
        OpKind::AvgPool2 => {
            need(1)?;
            tape.avg_pool2(inputs[0])
        }
        OpKind::Reshape => {
            need(1)?;
            let shape = attrs
                .shape
                .as_ref()
                .ok_or_else(|| bad("forward_op", "reshape needs a target shape".into()))?;
            tape.reshape(inputs[0], shape)
        }
        OpKind::Concat => tape.concat(inputs, attrs.axis),
    }
}
