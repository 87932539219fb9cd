//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! The engine is deliberately small: row-major buffers, a handful of
//! primitive ops whose backward rules are themselves expressed through
//! those same primitives, and a `Tape` that records every attached
//! operation. Because backward rules are built from recorded ops, calling
//! [`Tape::backward`] with `create_graph = true` yields gradients that are
//! again differentiable — the second pass needed for gradient penalties.
//!
//! Values are f64 end to end; single precision only appears at the
//! checkpoint/dataset boundary.

mod composites;
mod kernels;
mod ops;
mod tape;

pub use composites::{forward_op, OpAttrs, OpKind};
pub use tape::{NodeId, Tape};

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: invalid argument: {detail}")]
    InvalidArg { op: &'static str, detail: String },
    #[error("unknown op kind `{0}`")]
    UnknownKind(String),
    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tensor is not attached to the tape")]
    Detached,
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense real tensor. Cloning is cheap (shared buffer).
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<[f64]>,
    node: Option<NodeId>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("node", &self.node)
            .finish()
    }
}

impl Tensor {
    /// Detached tensor from raw values. Errors on shape/length mismatch or
    /// non-finite entries.
    pub fn from_vec(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        if numel(shape) != values.len() {
            return Err(TensorError::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} needs {} values, got {}", shape, numel(shape), values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "from_vec" });
        }
        Ok(Tensor { shape: shape.to_vec(), data: values.into(), node: None })
    }

    pub fn scalar_from(v: f64) -> Result<Tensor> {
        Tensor::from_vec(&[], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel(shape)].into(), node: None }
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![v; numel(shape)].into(), node: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Extract the single value of a scalar (or one-element) tensor.
    pub fn scalar(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(TensorError::NotScalar(self.shape.clone()));
        }
        Ok(self.data[0])
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    /// Same values, no tape linkage.
    pub fn detach(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: Arc::clone(&self.data), node: None }
    }

    pub(crate) fn attached(shape: Vec<usize>, data: Arc<[f64]>, node: NodeId) -> Tensor {
        Tensor { shape, data, node: Some(node) }
    }

    pub(crate) fn detached_parts(shape: Vec<usize>, data: Arc<[f64]>) -> Tensor {
        Tensor { shape, data, node: None }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn same_shape(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape()
}
