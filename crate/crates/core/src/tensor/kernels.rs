//! Value-level kernels behind the tape primitives. Plain loops, row-major.

use super::tape::ConvGeom;

/// c (m×n) += a (m×k) · b (k×n)
pub fn mm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (t, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// c (m×k) += a (m×n) · b (k×n)ᵀ
pub fn mm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut s = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            c[i * k + j] += s;
        }
    }
}

/// c (k×n) += a (m×k)ᵀ · b (m×n)
pub fn mm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for t in 0..m {
        let arow = &a[t * k..(t + 1) * k];
        let brow = &b[t * n..(t + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// im2col: image (B,C,H,W) → patch columns (B, C·kh·kw, oh·ow).
pub fn gather_patches(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ConvGeom { batch, chans, in_h, in_w, k_h, k_w, stride, pad, out_h, out_w } = *g;
    let mut out = vec![0.0; batch * chans * k_h * k_w * out_h * out_w];
    let cols = out_h * out_w;
    let plane = in_h * in_w;
    for b in 0..batch {
        let xb = &x[b * chans * plane..(b + 1) * chans * plane];
        let ob = &mut out[b * chans * k_h * k_w * cols..(b + 1) * chans * k_h * k_w * cols];
        for c in 0..chans {
            for ki in 0..k_h {
                for kj in 0..k_w {
                    let row = ((c * k_h + ki) * k_w + kj) * cols;
                    for oh in 0..out_h {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= in_h as isize {
                            continue;
                        }
                        for ow in 0..out_w {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= in_w as isize {
                                continue;
                            }
                            ob[row + oh * out_w + ow] = xb[c * plane + ih as usize * in_w + iw as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// col2im: adjoint of [`gather_patches`] (scatter-add into the image grid).
pub fn scatter_patches(cols_in: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ConvGeom { batch, chans, in_h, in_w, k_h, k_w, stride, pad, out_h, out_w } = *g;
    let mut out = vec![0.0; batch * chans * in_h * in_w];
    let cols = out_h * out_w;
    let plane = in_h * in_w;
    for b in 0..batch {
        let cb = &cols_in[b * chans * k_h * k_w * cols..(b + 1) * chans * k_h * k_w * cols];
        let ob = &mut out[b * chans * plane..(b + 1) * chans * plane];
        for c in 0..chans {
            for ki in 0..k_h {
                for kj in 0..k_w {
                    let row = ((c * k_h + ki) * k_w + kj) * cols;
                    for oh in 0..out_h {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= in_h as isize {
                            continue;
                        }
                        for ow in 0..out_w {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= in_w as isize {
                                continue;
                            }
                            ob[c * plane + ih as usize * in_w + iw as usize] += cb[row + oh * out_w + ow];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Sum out the given (sorted, unique) axes of `shape`.
pub fn sum_axes(x: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let keep: Vec<usize> = (0..shape.len()).filter(|d| !axes.contains(d)).collect();
    let out_shape: Vec<usize> = keep.iter().map(|&d| shape[d]).collect();
    let out_strides = row_major_strides(&out_shape);
    let out_len: usize = out_shape.iter().product();
    let mut out = vec![0.0; out_len];
    let mut idx = vec![0usize; shape.len()];
    for &v in x {
        let mut o = 0;
        for (pos, &d) in keep.iter().enumerate() {
            o += idx[d] * out_strides[pos];
        }
        out[o] += v;
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Replicate `x` along inserted axes to reach `target` (adjoint of sum_axes).
pub fn broadcast_axes(x: &[f64], target: &[usize], axes: &[usize]) -> Vec<f64> {
    let keep: Vec<usize> = (0..target.len()).filter(|d| !axes.contains(d)).collect();
    let in_shape: Vec<usize> = keep.iter().map(|&d| target[d]).collect();
    let in_strides = row_major_strides(&in_shape);
    let out_len: usize = target.iter().product();
    let mut out = vec![0.0; out_len];
    let mut idx = vec![0usize; target.len()];
    for slot in out.iter_mut() {
        let mut i = 0;
        for (pos, &d) in keep.iter().enumerate() {
            i += idx[d] * in_strides[pos];
        }
        *slot = x[i];
        for d in (0..target.len()).rev() {
            idx[d] += 1;
            if idx[d] < target[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}
