//! Operation tape and reverse pass.
//!
//! Every attached op appends a node holding its kind, its input tensors and
//! its output. Backward walks nodes in reverse creation order and emits each
//! op's backward rule *through the same op set*, so with `create_graph` the
//! returned gradients are themselves attached and differentiable.

use super::{numel, Result, Tensor, TensorError};
use std::cell::RefCell;

pub type NodeId = usize;

/// Spatial geometry shared by the patch gather/scatter pair (im2col/col2im).
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub chans: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn cols_shape(&self) -> Vec<usize> {
        vec![self.batch, self.chans * self.k_h * self.k_w, self.out_h * self.out_w]
    }

    pub fn image_shape(&self) -> Vec<usize> {
        vec![self.batch, self.chans, self.in_h, self.in_w]
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    ScalarAdd,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sqrt,
    Recip,
    Matmul,
    MatBatchRight,
    MatGradLeft,
    MatGradRight,
    Transpose,
    Reshape,
    SumAxes(Vec<usize>),
    Broadcast(Vec<usize>),
    Gather(ConvGeom),
    Scatter(ConvGeom),
    AvgPool2,
    Upsample2,
    Concat(usize),
    Slice { axis: usize, start: usize },
    Embed { axis: usize, start: usize },
}

#[derive(Clone)]
pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<Tensor>,
    pub output: Tensor,
}

struct TapeState {
    nodes: Vec<Node>,
    recording: bool,
    check_finite: bool,
}

/// Append-only op recorder. Single-threaded by construction; independent
/// tapes may live on different threads.
pub struct Tape {
    state: RefCell<TapeState>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Recording tape for training passes.
    pub fn new() -> Tape {
        Tape { state: RefCell::new(TapeState { nodes: Vec::new(), recording: true, check_finite: true }) }
    }

    /// Non-recording tape: ops validate and compute but attach nothing.
    pub fn inference() -> Tape {
        Tape { state: RefCell::new(TapeState { nodes: Vec::new(), recording: false, check_finite: true }) }
    }

    /// Number of recorded nodes (computation-graph size).
    pub fn node_count(&self) -> usize {
        self.state.borrow().nodes.len()
    }

    pub fn is_recording(&self) -> bool {
        self.state.borrow().recording
    }

    /// Attach `t` as a differentiation root. On a non-recording tape this is
    /// a detached copy.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        let mut st = self.state.borrow_mut();
        if !st.recording {
            return t.detach();
        }
        let id = st.nodes.len();
        let out = Tensor::attached(t.shape().to_vec(), t.data().to_vec().into(), id);
        st.nodes.push(Node { op: Op::Leaf, inputs: Vec::new(), output: out.clone() });
        out
    }

    /// Record one op result. The node is appended only while recording and
    /// when at least one input is attached; otherwise the result is detached.
    pub(crate) fn push(
        &self,
        name: &'static str,
        op: Op,
        inputs: &[&Tensor],
        shape: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Tensor> {
        debug_assert_eq!(numel(&shape), values.len());
        if self.state.borrow().check_finite && values.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        let mut st = self.state.borrow_mut();
        let attach = st.recording && inputs.iter().any(|t| t.is_attached());
        if !attach {
            return Ok(Tensor::detached_parts(shape, values.into()));
        }
        let id = st.nodes.len();
        let out = Tensor::attached(shape, values.into(), id);
        st.nodes.push(Node { op, inputs: inputs.iter().map(|t| (*t).clone()).collect(), output: out.clone() });
        Ok(out)
    }

    fn node_clone(&self, id: NodeId) -> Node {
        self.state.borrow().nodes[id].clone()
    }

    fn set_recording(&self, on: bool) -> bool {
        let mut st = self.state.borrow_mut();
        std::mem::replace(&mut st.recording, on)
    }

    /// Reverse pass from a scalar `output` to each tensor in `wrt`.
    ///
    /// With `create_graph` the emitted backward ops are recorded, so the
    /// returned gradients support a further backward pass. Tensors in `wrt`
    /// must be attached; attached-but-unreachable ones get a zero gradient.
    pub fn backward(&self, output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
        if output.numel() != 1 {
            return Err(TensorError::NotScalar(output.shape().to_vec()));
        }
        let out_id = output.node().ok_or(TensorError::Detached)?;
        for w in wrt {
            if !w.is_attached() {
                return Err(TensorError::Detached);
            }
        }

        // Reachability over the prefix ending at the output node.
        let mut reach = vec![false; out_id + 1];
        reach[out_id] = true;
        {
            let st = self.state.borrow();
            for id in (0..=out_id).rev() {
                if !reach[id] {
                    continue;
                }
                for input in &st.nodes[id].inputs {
                    if let Some(p) = input.node() {
                        reach[p] = true;
                    }
                }
            }
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; out_id + 1];
        grads[out_id] = Some(Tensor::full(output.shape(), 1.0));

        // Backward-internal ops skip the per-op finiteness scan; a
        // divergence still surfaces at the (checked) loss values.
        let prev = self.set_recording(create_graph);
        let prev_check = {
            let mut st = self.state.borrow_mut();
            std::mem::replace(&mut st.check_finite, false)
        };
        let result = self.backward_sweep(out_id, &reach, &mut grads);
        self.state.borrow_mut().check_finite = prev_check;
        self.set_recording(prev);
        result?;

        Ok(wrt
            .iter()
            .map(|w| {
                let id = w.node().expect("checked above");
                match grads.get(id).and_then(|g| g.clone()) {
                    Some(g) => g,
                    None => Tensor::zeros(w.shape()),
                }
            })
            .collect())
    }

    fn backward_sweep(&self, out_id: NodeId, reach: &[bool], grads: &mut Vec<Option<Tensor>>) -> Result<()> {
        for id in (0..=out_id).rev() {
            if !reach[id] || grads[id].is_none() {
                continue;
            }
            let node = self.node_clone(id);
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let upstream = grads[id].clone().expect("present");
            let contribs = self.vjp(&node, &upstream)?;
            debug_assert_eq!(contribs.len(), node.inputs.len());
            for (input, contrib) in node.inputs.iter().zip(contribs) {
                let Some(pid) = input.node() else { continue };
                let merged = match grads[pid].take() {
                    None => contrib,
                    Some(acc) => self.add(&acc, &contrib)?,
                };
                grads[pid] = Some(merged);
            }
        }
        Ok(())
    }

    /// Backward rule of one node, expressed through recorded ops so the
    /// result stays differentiable under `create_graph`.
    fn vjp(&self, node: &Node, g: &Tensor) -> Result<Vec<Tensor>> {
        let x = |i: usize| &node.inputs[i];
        let y = &node.output;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add => vec![g.clone(), g.clone()],
            Op::Sub => vec![g.clone(), self.scalar_mul(g, -1.0)?],
            Op::Mul => vec![self.mul(g, x(1))?, self.mul(g, x(0))?],
            Op::ScalarMul(c) => vec![self.scalar_mul(g, *c)?],
            Op::ScalarAdd => vec![g.clone()],
            Op::Relu => vec![self.mul(g, &step_mask(x(0), 0.0))?],
            Op::LeakyRelu(slope) => vec![self.mul(g, &step_mask(x(0), *slope))?],
            Op::Tanh => {
                // g * (1 - y^2)
                let y2 = self.mul(y, y)?;
                let one_minus = self.scalar_add(&self.scalar_mul(&y2, -1.0)?, 1.0)?;
                vec![self.mul(g, &one_minus)?]
            }
            Op::Sqrt => {
                // g * 0.5 / y, with y == 0 masked to keep the hinge-clamped
                // zero-input case finite (upstream gradient is zero there).
                let denom = self.add(y, &zero_mask(y))?;
                vec![self.mul(g, &self.scalar_mul(&self.recip(&denom)?, 0.5)?)?]
            }
            Op::Recip => {
                let y2 = self.mul(y, y)?;
                vec![self.scalar_mul(&self.mul(g, &y2)?, -1.0)?]
            }
            Op::Matmul => vec![
                self.matmul(g, &self.transpose(x(1))?)?,
                self.matmul(&self.transpose(x(0))?, g)?,
            ],
            Op::MatBatchRight => vec![self.mat_grad_left(g, x(1))?, self.mat_grad_right(x(0), g)?],
            Op::MatGradLeft => vec![self.mat_batch_right(g, x(1))?, self.mat_grad_right(g, x(0))?],
            Op::MatGradRight => vec![self.mat_grad_left(x(1), g)?, self.mat_batch_right(x(0), g)?],
            Op::Transpose => vec![self.transpose(g)?],
            Op::Reshape => vec![self.reshape(g, x(0).shape())?],
            Op::SumAxes(axes) => vec![self.broadcast_axes(g, x(0).shape(), axes)?],
            Op::Broadcast(axes) => vec![self.sum_axes(g, axes)?],
            Op::Gather(geom) => vec![self.scatter_patches(g, geom)?],
            Op::Scatter(geom) => vec![self.gather_patches_geom(g, geom)?],
            Op::AvgPool2 => vec![self.scalar_mul(&self.upsample2(g)?, 0.25)?],
            Op::Upsample2 => vec![self.scalar_mul(&self.avg_pool2(g)?, 4.0)?],
            Op::Concat(axis) => {
                let mut outs = Vec::with_capacity(node.inputs.len());
                let mut offset = 0;
                for input in &node.inputs {
                    let len = input.shape()[*axis];
                    outs.push(self.slice(g, *axis, offset, len)?);
                    offset += len;
                }
                outs
            }
            Op::Slice { axis, start } => vec![self.embed(g, x(0).shape(), *axis, *start)?],
            Op::Embed { axis, start } => vec![self.slice(g, *axis, *start, x(0).shape()[*axis])?],
        })
    }
}

/// Constant derivative mask for (leaky-)relu: 1 on the positive side, the
/// negative-side slope at zero and below.
fn step_mask(x: &Tensor, slope: f64) -> Tensor {
    let vals: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { 1.0 } else { slope }).collect();
    Tensor::detached_parts(x.shape().to_vec(), vals.into())
}

/// Constant tensor that is 1 exactly where `y` is 0.
fn zero_mask(y: &Tensor) -> Tensor {
    let vals: Vec<f64> = y.data().iter().map(|&v| if v == 0.0 { 1.0 } else { 0.0 }).collect();
    Tensor::detached_parts(y.shape().to_vec(), vals.into())
}
