//! Tape-based reverse-mode differentiation over batched tensors.
//!
//! A [`Graph`] records every operation as it is evaluated. Loss nodes cache
//! their local gradient during the forward pass, so [`Graph::backward`] only
//! has to scale and route it.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::losses::{cross_entropy_with_grad, gpc_loss_with_grad};
use crate::params::{GradientSet, ModelParameters};
use crate::prototype::UnitPrototypes;
use crate::tensor::{self, ConvGeometry, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geometry: ConvGeometry,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Scale(Var, f64),
    Add(Var, Var),
    Sum(Var),
    /// Mean over the batch of a per-sample loss; `grad` is d(mean)/d(input).
    BatchLoss {
        input: Var,
        grad: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Leaf for parameter entry `index`; its gradient lands in slot `index`.
    pub fn param(&mut self, index: usize, value: Tensor) -> Var {
        self.push(value, Op::Param(index))
    }

    /// Registers every entry of `params` as a leaf, in order.
    pub fn params(&mut self, params: &ModelParameters) -> Vec<Var> {
        params
            .tensors()
            .enumerate()
            .map(|(i, t)| self.param(i, t.clone()))
            .collect()
    }

    /// `x (n, in) · w (in, out) + b (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(Error::shape("linear", &[xs[0], ws[0]], xs));
        }
        let (n, inp, out) = (xs[0], ws[0], ws[1]);
        let y = tensor::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            n,
            inp,
            out,
        );
        Ok(self.push(Tensor::new(vec![n, out], y)?, Op::Linear { x, w, b }))
    }

    /// Valid stride-1 convolution over NHWC input with `(k, k, c_in, c_out)` weights.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[0] != ws[1] || xs[3] != ws[2] {
            return Err(Error::shape("conv2d", &[0, 0, 0, ws.get(2).copied().unwrap_or(0)], &xs));
        }
        if xs[1] < ws[0] || xs[2] < ws[0] {
            return Err(Error::shape("conv2d spatial extent", &[ws[0], ws[0]], &xs[1..3]));
        }
        let geometry = ConvGeometry {
            batch: xs[0],
            height: xs[1],
            width: xs[2],
            in_channels: xs[3],
            kernel: ws[0],
            out_channels: ws[3],
        };
        let y = tensor::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            geometry,
        );
        let shape = vec![
            geometry.batch,
            geometry.out_height(),
            geometry.out_width(),
            geometry.out_channels,
        ];
        Ok(self.push(Tensor::new(shape, y)?, Op::Conv2d { x, w, b, geometry }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(tensor::relu);
        self.push(y, Op::Relu(x))
    }

    pub fn max_pool(&mut self, x: Var, size: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 || xs[1] < size || xs[2] < size {
            return Err(Error::shape("max pool", &[0, size, size, 0], &xs));
        }
        let (y, argmax) = tensor::max_pool_forward(self.value(x).data(), xs[0], xs[1], xs[2], xs[3], size);
        let shape = vec![xs[0], xs[1] / size, xs[2] / size, xs[3]];
        Ok(self.push(Tensor::new(shape, y)?, Op::MaxPool { x, argmax }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        Ok(self.push(y, Op::Reshape(x)))
    }

    /// Collapses everything but the leading (batch) dimension.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        let n = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(x, &[n, rest])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let y = self.value(x).map(|v| v * factor);
        self.push(y, Op::Scale(x, factor))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let y = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean softmax cross-entropy of `(n, K)` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        check_batch("cross-entropy", t, labels)?;
        let n = labels.len() as f64;
        let mut total = 0.0;
        let mut grad = Vec::with_capacity(t.len());
        for (i, &y) in labels.iter().enumerate() {
            let (loss, g) = cross_entropy_with_grad(t.row(i), y).map_err(|e| e.with_context(format!("sample {i}")))?;
            total += loss;
            grad.extend(g.into_iter().map(|v| v / n));
        }
        Ok(self.push(Tensor::scalar(total / n), Op::BatchLoss { input: logits, grad }))
    }

    /// Mean prototypical contrastive loss of `(n, Q)` representations
    /// against fixed prototypes.
    pub fn gpc(&mut self, z: Var, labels: &[usize], prototypes: &Arc<UnitPrototypes>) -> Result<Var> {
        let t = self.value(z);
        check_batch("contrastive loss", t, labels)?;
        let n = labels.len() as f64;
        let mut total = 0.0;
        let mut grad = Vec::with_capacity(t.len());
        for (i, &y) in labels.iter().enumerate() {
            let (loss, g) =
                gpc_loss_with_grad(t.row(i), y, prototypes).map_err(|e| e.with_context(format!("sample {i}")))?;
            total += loss;
            grad.extend(g.into_iter().map(|v| v / n));
        }
        Ok(self.push(Tensor::scalar(total / n), Op::BatchLoss { input: z, grad }))
    }

    /// Reverse pass from a scalar `root`. Parameters the root does not
    /// depend on get zero gradients.
    pub fn backward(&self, root: Var, params: &ModelParameters) -> Result<GradientSet> {
        if self.value(root).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        let mut out = GradientSet::zeros_for(params);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(i) => {
                    if *i >= params.len() || params.tensor(*i).shape() != g.shape() {
                        return Err(Error::Usage(format!(
                            "parameter leaf {i} does not match the parameter set"
                        )));
                    }
                    out.accumulate(*i, &g);
                }
                Op::Linear { x, w, b } => {
                    let (xt, wt) = (self.value(*x), self.value(*w));
                    let (n, inp, outd) = (xt.shape()[0], wt.shape()[0], wt.shape()[1]);
                    let (dx, dw, db) = tensor::linear_backward(xt.data(), wt.data(), g.data(), n, inp, outd);
                    accumulate(&mut grads, *x, xt.shape(), dx);
                    accumulate(&mut grads, *w, wt.shape(), dw);
                    accumulate(&mut grads, *b, &[outd], db);
                }
                Op::Conv2d { x, w, b, geometry } => {
                    let (xt, wt) = (self.value(*x), self.value(*w));
                    let (dx, dw, db) = tensor::conv2d_backward(xt.data(), wt.data(), g.data(), *geometry);
                    accumulate(&mut grads, *x, xt.shape(), dx);
                    accumulate(&mut grads, *w, wt.shape(), dw);
                    accumulate(&mut grads, *b, &[geometry.out_channels], db);
                }
                Op::Relu(x) => {
                    let xt = self.value(*x);
                    let dx = xt
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, xt.shape(), dx);
                }
                Op::MaxPool { x, argmax } => {
                    let xt = self.value(*x);
                    let mut dx = vec![0.0; xt.len()];
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        dx[src] += gv;
                    }
                    accumulate(&mut grads, *x, xt.shape(), dx);
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, &shape, g.into_data());
                }
                Op::Scale(x, factor) => {
                    let shape = self.value(*x).shape().to_vec();
                    let dx = g.data().iter().map(|v| v * factor).collect();
                    accumulate(&mut grads, *x, &shape, dx);
                }
                Op::Add(a, b) => {
                    let shape = g.shape().to_vec();
                    accumulate(&mut grads, *a, &shape, g.data().to_vec());
                    accumulate(&mut grads, *b, &shape, g.into_data());
                }
                Op::Sum(x) => {
                    let xt = self.value(*x);
                    accumulate(&mut grads, *x, xt.shape(), vec![g.data()[0]; xt.len()]);
                }
                Op::BatchLoss { input, grad } => {
                    let seed = g.data()[0];
                    let shape = self.value(*input).shape().to_vec();
                    accumulate(&mut grads, *input, &shape, grad.iter().map(|v| v * seed).collect());
                }
            }
        }
        Ok(out)
    }
}

fn check_batch(context: &str, t: &Tensor, labels: &[usize]) -> Result<()> {
    if t.shape().len() != 2 || t.shape()[0] != labels.len() {
        return Err(Error::shape(context, &[labels.len(), 0], t.shape()));
    }
    Ok(())
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(data) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape follows value shape"));
        }
    }
}
