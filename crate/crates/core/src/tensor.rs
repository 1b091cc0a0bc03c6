//! Dense row-major `f64` tensors and the numeric kernels the layers need.
//!
//! Image tensors use NHWC layout; convolution weights are `(kh, kw, c_in, c_out)`
//! and linear weights are `(in, out)` so that a batch forward is `x · W + b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Usage(format!("tensor shape {shape:?} has a zero dimension")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Usage(format!(
                "tensor shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Stacks equally-shaped rows into a `(n, ..row_shape)` batch.
    pub fn stack(rows: &[&Tensor]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Usage("cannot stack zero tensors".into()))?;
        let mut shape = vec![rows.len()];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(rows.len() * first.len());
        for row in rows {
            if row.shape() != first.shape() {
                return Err(Error::shape("stack", first.shape(), row.shape()));
            }
            data.extend_from_slice(row.data());
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::shape("reshape", shape, &self.shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Row `i` of the leading dimension, as a flat slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let width = self.len() / self.shape[0];
        &self.data[i * width..(i + 1) * width]
    }

    /// `self += scale * other`, element-wise.
    pub fn scaled_add(&mut self, scale: f64, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Geometry of a valid (unpadded, stride 1) 2-D convolution over NHWC input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub out_channels: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        self.height + 1 - self.kernel
    }

    pub fn out_width(&self) -> usize {
        self.width + 1 - self.kernel
    }
}

/// `x (n, in) · w (in, out) + b (out)`.
pub fn linear_forward(x: &[f64], w: &[f64], b: &[f64], n: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(n * out);
    for i in 0..n {
        y.extend_from_slice(b);
        let yr = &mut y[i * out..(i + 1) * out];
        let xr = &x[i * inp..(i + 1) * inp];
        for (k, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = &w[k * out..(k + 1) * out];
            for (yv, &wv) in yr.iter_mut().zip(wr) {
                *yv += xv * wv;
            }
        }
    }
    y
}

/// Gradients of [`linear_forward`]: returns `(dx, dw, db)`.
pub fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    n: usize,
    inp: usize,
    out: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; n * inp];
    let mut dw = vec![0.0; inp * out];
    let mut db = vec![0.0; out];
    for i in 0..n {
        let dyr = &dy[i * out..(i + 1) * out];
        let xr = &x[i * inp..(i + 1) * inp];
        for (d, &g) in db.iter_mut().zip(dyr) {
            *d += g;
        }
        for k in 0..inp {
            let wr = &w[k * out..(k + 1) * out];
            dx[i * inp + k] = wr.iter().zip(dyr).map(|(a, b)| a * b).sum();
            let xv = xr[k];
            if xv != 0.0 {
                let dwr = &mut dw[k * out..(k + 1) * out];
                for (d, &g) in dwr.iter_mut().zip(dyr) {
                    *d += xv * g;
                }
            }
        }
    }
    (dx, dw, db)
}

pub fn conv2d_forward(x: &[f64], w: &[f64], b: &[f64], g: ConvGeometry) -> Vec<f64> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (c_in, c_out, k) = (g.in_channels, g.out_channels, g.kernel);
    let mut y = vec![0.0; g.batch * oh * ow * c_out];
    for n in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = ((n * oh + oy) * ow + ox) * c_out;
                let acc = &mut y[base..base + c_out];
                acc.copy_from_slice(b);
                for ky in 0..k {
                    for kx in 0..k {
                        let xin = ((n * g.height + oy + ky) * g.width + ox + kx) * c_in;
                        for ci in 0..c_in {
                            let xv = x[xin + ci];
                            let wbase = ((ky * k + kx) * c_in + ci) * c_out;
                            for (a, &wv) in acc.iter_mut().zip(&w[wbase..wbase + c_out]) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`conv2d_forward`]: returns `(dx, dw, db)`.
pub fn conv2d_backward(x: &[f64], w: &[f64], dy: &[f64], g: ConvGeometry) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (c_in, c_out, k) = (g.in_channels, g.out_channels, g.kernel);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; c_out];
    for n in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = ((n * oh + oy) * ow + ox) * c_out;
                let grad = &dy[base..base + c_out];
                for (d, &gv) in db.iter_mut().zip(grad) {
                    *d += gv;
                }
                for ky in 0..k {
                    for kx in 0..k {
                        let xin = ((n * g.height + oy + ky) * g.width + ox + kx) * c_in;
                        for ci in 0..c_in {
                            let wbase = ((ky * k + kx) * c_in + ci) * c_out;
                            let xv = x[xin + ci];
                            let wr = &w[wbase..wbase + c_out];
                            let dwr = &mut dw[wbase..wbase + c_out];
                            let mut dxv = 0.0;
                            for co in 0..c_out {
                                dwr[co] += xv * grad[co];
                                dxv += wr[co] * grad[co];
                            }
                            dx[xin + ci] += dxv;
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Non-overlapping `size × size` max pooling over NHWC input. Returns the
/// pooled values and, for each output, the flat input index that won.
/// Trailing rows/columns that do not fill a window are dropped.
pub fn max_pool_forward(
    x: &[f64],
    batch: usize,
    height: usize,
    width: usize,
    channels: usize,
    size: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (height / size, width / size);
    let mut y = Vec::with_capacity(batch * oh * ow * channels);
    let mut arg = Vec::with_capacity(y.capacity());
    for n in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                for c in 0..channels {
                    let mut best_idx = usize::MAX;
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..size {
                        for dx in 0..size {
                            let idx = ((n * height + oy * size + dy) * width + ox * size + dx) * channels + c;
                            // first maximum wins on ties
                            if best_idx == usize::MAX || x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    y.push(best);
                    arg.push(best_idx);
                }
            }
        }
    }
    (y, arg)
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `log Σ exp(v)` with max subtraction.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| (x - lse).exp()).collect()
}
