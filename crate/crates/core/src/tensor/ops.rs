//! Primitive tape ops: shape validation, value computation, node recording.

use super::kernels;
use super::tape::{ConvGeom, Op, Tape};
use super::{numel, same_shape, Result, Tensor, TensorError};

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

impl Tape {
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if !same_shape(a, b) {
            return Err(shape_err("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let vals = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        self.push("add", Op::Add, &[a, b], a.shape().to_vec(), vals)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if !same_shape(a, b) {
            return Err(shape_err("sub", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let vals = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        self.push("sub", Op::Sub, &[a, b], a.shape().to_vec(), vals)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if !same_shape(a, b) {
            return Err(shape_err("mul", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let vals = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        self.push("mul", Op::Mul, &[a, b], a.shape().to_vec(), vals)
    }

    pub fn scalar_mul(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        if !c.is_finite() {
            return Err(TensorError::NonFinite { op: "scalar_mul" });
        }
        let vals = a.data().iter().map(|x| x * c).collect();
        self.push("scalar_mul", Op::ScalarMul(c), &[a], a.shape().to_vec(), vals)
    }

    pub fn scalar_add(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        if !c.is_finite() {
            return Err(TensorError::NonFinite { op: "scalar_add" });
        }
        let vals = a.data().iter().map(|x| x + c).collect();
        self.push("scalar_add", Op::ScalarAdd, &[a], a.shape().to_vec(), vals)
    }

    pub fn relu(&self, a: &Tensor) -> Result<Tensor> {
        let vals = a.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        self.push("relu", Op::Relu, &[a], a.shape().to_vec(), vals)
    }

    pub fn leaky_relu(&self, a: &Tensor, slope: f64) -> Result<Tensor> {
        if !slope.is_finite() {
            return Err(TensorError::NonFinite { op: "leaky_relu" });
        }
        let vals = a.data().iter().map(|&x| if x > 0.0 { x } else { slope * x }).collect();
        self.push("leaky_relu", Op::LeakyRelu(slope), &[a], a.shape().to_vec(), vals)
    }

    pub fn tanh(&self, a: &Tensor) -> Result<Tensor> {
        let vals = a.data().iter().map(|&x| x.tanh()).collect();
        self.push("tanh", Op::Tanh, &[a], a.shape().to_vec(), vals)
    }

    pub fn sqrt(&self, a: &Tensor) -> Result<Tensor> {
        let vals = a.data().iter().map(|&x| x.sqrt()).collect();
        self.push("sqrt", Op::Sqrt, &[a], a.shape().to_vec(), vals)
    }

    pub fn recip(&self, a: &Tensor) -> Result<Tensor> {
        let vals = a.data().iter().map(|&x| 1.0 / x).collect();
        self.push("recip", Op::Recip, &[a], a.shape().to_vec(), vals)
    }

    /// (m×k) · (k×n) → (m×n)
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ash, bsh) = (a.shape(), b.shape());
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", ash, bsh)));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let mut vals = vec![0.0; m * n];
        kernels::mm_nn(a.data(), b.data(), &mut vals, m, k, n);
        self.push("matmul", Op::Matmul, &[a, b], vec![m, n], vals)
    }

    /// (m×k) · (B×k×n) → (B×m×n), shared left operand.
    pub fn mat_batch_right(&self, w: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (wsh, xsh) = (w.shape(), x.shape());
        if wsh.len() != 2 || xsh.len() != 3 || wsh[1] != xsh[1] {
            return Err(shape_err("mat_batch_right", format!("{:?} x {:?}", wsh, xsh)));
        }
        let (m, k) = (wsh[0], wsh[1]);
        let (batch, n) = (xsh[0], xsh[2]);
        let mut vals = vec![0.0; batch * m * n];
        for b in 0..batch {
            kernels::mm_nn(w.data(), &x.data()[b * k * n..(b + 1) * k * n], &mut vals[b * m * n..(b + 1) * m * n], m, k, n);
        }
        self.push("mat_batch_right", Op::MatBatchRight, &[w, x], vec![batch, m, n], vals)
    }

    /// Σ_b a_b · b_bᵀ : (B×m×n, B×k×n) → (m×k)
    pub fn mat_grad_left(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ash, bsh) = (a.shape(), b.shape());
        if ash.len() != 3 || bsh.len() != 3 || ash[0] != bsh[0] || ash[2] != bsh[2] {
            return Err(shape_err("mat_grad_left", format!("{:?} x {:?}", ash, bsh)));
        }
        let (batch, m, n, k) = (ash[0], ash[1], ash[2], bsh[1]);
        let mut vals = vec![0.0; m * k];
        for bi in 0..batch {
            kernels::mm_nt(&a.data()[bi * m * n..(bi + 1) * m * n], &b.data()[bi * k * n..(bi + 1) * k * n], &mut vals, m, n, k);
        }
        self.push("mat_grad_left", Op::MatGradLeft, &[a, b], vec![m, k], vals)
    }

    /// aᵀ · b_b per batch item: (m×k, B×m×n) → (B×k×n)
    pub fn mat_grad_right(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ash, bsh) = (a.shape(), b.shape());
        if ash.len() != 2 || bsh.len() != 3 || ash[0] != bsh[1] {
            return Err(shape_err("mat_grad_right", format!("{:?} x {:?}", ash, bsh)));
        }
        let (m, k) = (ash[0], ash[1]);
        let (batch, n) = (bsh[0], bsh[2]);
        let mut vals = vec![0.0; batch * k * n];
        for bi in 0..batch {
            kernels::mm_tn(a.data(), &b.data()[bi * m * n..(bi + 1) * m * n], &mut vals[bi * k * n..(bi + 1) * k * n], m, k, n);
        }
        self.push("mat_grad_right", Op::MatGradRight, &[a, b], vec![batch, k, n], vals)
    }

    pub fn transpose(&self, a: &Tensor) -> Result<Tensor> {
        let sh = a.shape();
        if sh.len() != 2 {
            return Err(shape_err("transpose", format!("{:?}", sh)));
        }
        let (m, n) = (sh[0], sh[1]);
        let mut vals = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                vals[j * m + i] = a.data()[i * n + j];
            }
        }
        self.push("transpose", Op::Transpose, &[a], vec![n, m], vals)
    }

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != a.numel() {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", a.shape(), shape)));
        }
        self.push("reshape", Op::Reshape, &[a], shape.to_vec(), a.data().to_vec())
    }

    /// Sum out `axes` (unique, in range); summing all axes yields a scalar.
    pub fn sum_axes(&self, a: &Tensor, axes: &[usize]) -> Result<Tensor> {
        let axes = normalize_axes("sum_axes", axes, a.shape().len())?;
        let vals = kernels::sum_axes(a.data(), a.shape(), &axes);
        let out_shape: Vec<usize> =
            (0..a.shape().len()).filter(|d| !axes.contains(d)).map(|d| a.shape()[d]).collect();
        self.push("sum_axes", Op::SumAxes(axes), &[a], out_shape, vals)
    }

    pub fn sum_all(&self, a: &Tensor) -> Result<Tensor> {
        let all: Vec<usize> = (0..a.shape().len()).collect();
        self.sum_axes(a, &all)
    }

    /// Replicate `a` along `axes` to reach `target` (a's shape must equal
    /// `target` with `axes` removed).
    pub fn broadcast_axes(&self, a: &Tensor, target: &[usize], axes: &[usize]) -> Result<Tensor> {
        let axes = normalize_axes("broadcast_axes", axes, target.len())?;
        let expect: Vec<usize> =
            (0..target.len()).filter(|d| !axes.contains(d)).map(|d| target[d]).collect();
        if expect != a.shape() {
            return Err(shape_err("broadcast_axes", format!("{:?} -> {:?} over {:?}", a.shape(), target, axes)));
        }
        let vals = kernels::broadcast_axes(a.data(), target, &axes);
        self.push("broadcast_axes", Op::Broadcast(axes), &[a], target.to_vec(), vals)
    }

    pub(crate) fn gather_patches_geom(&self, x: &Tensor, geom: &ConvGeom) -> Result<Tensor> {
        if x.shape() != geom.image_shape().as_slice() {
            return Err(shape_err("gather_patches", format!("{:?} vs geom {:?}", x.shape(), geom)));
        }
        let vals = kernels::gather_patches(x.data(), geom);
        self.push("gather_patches", Op::Gather(geom.clone()), &[x], geom.cols_shape(), vals)
    }

    pub(crate) fn scatter_patches(&self, cols: &Tensor, geom: &ConvGeom) -> Result<Tensor> {
        if cols.shape() != geom.cols_shape().as_slice() {
            return Err(shape_err("scatter_patches", format!("{:?} vs geom {:?}", cols.shape(), geom)));
        }
        let vals = kernels::scatter_patches(cols.data(), geom);
        self.push("scatter_patches", Op::Scatter(geom.clone()), &[cols], geom.image_shape(), vals)
    }

    /// 2×2 average pooling with stride 2 on (B,C,H,W); H and W must be even.
    pub fn avg_pool2(&self, x: &Tensor) -> Result<Tensor> {
        let sh = x.shape();
        if sh.len() != 4 || sh[2] % 2 != 0 || sh[3] % 2 != 0 {
            return Err(shape_err("avg_pool2", format!("{:?}", sh)));
        }
        let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
        let (oh, ow) = (h / 2, w / 2);
        let mut vals = vec![0.0; b * c * oh * ow];
        let d = x.data();
        for bc in 0..b * c {
            let src = &d[bc * h * w..(bc + 1) * h * w];
            let dst = &mut vals[bc * oh * ow..(bc + 1) * oh * ow];
            for i in 0..oh {
                for j in 0..ow {
                    let p = 2 * i * w + 2 * j;
                    dst[i * ow + j] = 0.25 * (src[p] + src[p + 1] + src[p + w] + src[p + w + 1]);
                }
            }
        }
        self.push("avg_pool2", Op::AvgPool2, &[x], vec![b, c, oh, ow], vals)
    }

    /// Nearest-neighbor ×2 upsampling on (B,C,H,W).
    pub fn upsample2(&self, x: &Tensor) -> Result<Tensor> {
        let sh = x.shape();
        if sh.len() != 4 {
            return Err(shape_err("upsample2", format!("{:?}", sh)));
        }
        let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
        let (oh, ow) = (2 * h, 2 * w);
        let mut vals = vec![0.0; b * c * oh * ow];
        let d = x.data();
        for bc in 0..b * c {
            let src = &d[bc * h * w..(bc + 1) * h * w];
            let dst = &mut vals[bc * oh * ow..(bc + 1) * oh * ow];
            for i in 0..oh {
                for j in 0..ow {
                    dst[i * ow + j] = src[(i / 2) * w + j / 2];
                }
            }
        }
        self.push("upsample2", Op::Upsample2, &[x], vec![b, c, oh, ow], vals)
    }

    pub fn concat(&self, parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArg { op: "concat", detail: "no inputs".into() });
        }
        let base = parts[0].shape();
        if axis >= base.len() {
            return Err(TensorError::InvalidArg { op: "concat", detail: format!("axis {axis} out of range") });
        }
        let mut axis_total = 0;
        for p in parts {
            let sh = p.shape();
            if sh.len() != base.len()
                || sh.iter().enumerate().any(|(d, &s)| d != axis && s != base[d])
            {
                return Err(shape_err("concat", format!("{:?} vs {:?}", sh, base)));
            }
            axis_total += sh[axis];
        }
        let mut out_shape = base.to_vec();
        out_shape[axis] = axis_total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut vals = vec![0.0; numel(&out_shape)];
        let mut offset = 0;
        for p in parts {
            let len = p.shape()[axis];
            for o in 0..outer {
                let src = &p.data()[o * len * inner..(o + 1) * len * inner];
                let dst_start = (o * axis_total + offset) * inner;
                vals[dst_start..dst_start + len * inner].copy_from_slice(src);
            }
            offset += len;
        }
        self.push("concat", Op::Concat(axis), parts, out_shape, vals)
    }

    pub fn slice(&self, a: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let sh = a.shape();
        if axis >= sh.len() || start + len > sh[axis] {
            return Err(TensorError::InvalidArg {
                op: "slice",
                detail: format!("axis {axis} range {start}..{} of {:?}", start + len, sh),
            });
        }
        let outer: usize = sh[..axis].iter().product();
        let inner: usize = sh[axis + 1..].iter().product();
        let mut out_shape = sh.to_vec();
        out_shape[axis] = len;
        let mut vals = vec![0.0; numel(&out_shape)];
        for o in 0..outer {
            let src_start = (o * sh[axis] + start) * inner;
            vals[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&a.data()[src_start..src_start + len * inner]);
        }
        self.push("slice", Op::Slice { axis, start }, &[a], out_shape, vals)
    }

    /// Place `a` into a zero tensor of shape `to` along `axis` at `start`
    /// (adjoint of `slice`).
    pub fn embed(&self, a: &Tensor, to: &[usize], axis: usize, start: usize) -> Result<Tensor> {
        let sh = a.shape();
        if axis >= to.len()
            || sh.len() != to.len()
            || start + sh[axis] > to[axis]
            || sh.iter().enumerate().any(|(d, &s)| d != axis && s != to[d])
        {
            return Err(shape_err("embed", format!("{:?} into {:?} axis {axis} at {start}", sh, to)));
        }
        let outer: usize = to[..axis].iter().product();
        let inner: usize = to[axis + 1..].iter().product();
        let len = sh[axis];
        let mut vals = vec![0.0; numel(to)];
        for o in 0..outer {
            let dst_start = (o * to[axis] + start) * inner;
            vals[dst_start..dst_start + len * inner]
                .copy_from_slice(&a.data()[o * len * inner..(o + 1) * len * inner]);
        }
        self.push("embed", Op::Embed { axis, start }, &[a], to.to_vec(), vals)
    }
}

fn normalize_axes(op: &'static str, axes: &[usize], ndim: usize) -> Result<Vec<usize>> {
    let mut out = axes.to_vec();
    out.sort_unstable();
    out.dedup();
    if out.len() != axes.len() || out.iter().any(|&a| a >= ndim) {
        return Err(TensorError::InvalidArg { op, detail: format!("bad axes {:?} for ndim {}", axes, ndim) });
    }
    Ok(out)
}
