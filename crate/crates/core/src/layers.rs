use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{self, ConvGeometry, Tensor};

/// One stage of a feed-forward network. Parameterized layers own a weight
/// and a bias entry, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Weight `(input, output)`, bias `(output)`.
    Linear {
        input: usize,
        output: usize,
    },
    /// Valid stride-1 convolution. Weight `(kernel, kernel, in, out)`, bias `(out)`.
    Conv2d {
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
    },
    MaxPool2d {
        size: usize,
    },
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Linear { input, output } => vec![vec![input, output], vec![output]],
            LayerSpec::Conv2d {
                kernel,
                in_channels,
                out_channels,
            } => vec![vec![kernel, kernel, in_channels, out_channels], vec![out_channels]],
            _ => Vec::new(),
        }
    }

    pub fn num_param_entries(&self) -> usize {
        self.param_shapes().len()
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Linear { input, .. } => input,
            LayerSpec::Conv2d {
                kernel, in_channels, ..
            } => kernel * kernel * in_channels,
            _ => 0,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |expected: &[usize]| Err(Error::shape(format!("{self:?}"), expected, input));
        match *self {
            LayerSpec::Linear { input: i, output } => {
                if input != [i] {
                    return bad(&[i]);
                }
                Ok(vec![output])
            }
            LayerSpec::Conv2d {
                kernel,
                in_channels,
                out_channels,
            } => {
                if input.len() != 3 || input[2] != in_channels || input[0] < kernel || input[1] < kernel {
                    return bad(&[kernel, kernel, in_channels]);
                }
                Ok(vec![input[0] + 1 - kernel, input[1] + 1 - kernel, out_channels])
            }
            LayerSpec::MaxPool2d { size } => {
                if input.len() != 3 || input[0] < size || input[1] < size {
                    return bad(&[size, size, 0]);
                }
                Ok(vec![input[0] / size, input[1] / size, input[2]])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Fan-in scaled uniform draw, `U(−1/√fan_in, 1/√fan_in)`, for weight and bias.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Tensor> {
        let bound = 1.0 / (self.fan_in().max(1) as f64).sqrt();
        self.param_shapes()
            .into_iter()
            .map(|shape| {
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                Tensor::new(shape, data).expect("shape product matches")
            })
            .collect()
    }

    fn check_params(&self, params: &[&Tensor]) -> Result<()> {
        let shapes = self.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::Config(format!(
                "{self:?} expects {} parameter entries, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (expected, p) in shapes.iter().zip(params) {
            if p.shape() != expected.as_slice() {
                return Err(Error::shape(format!("{self:?} parameters"), expected, p.shape()));
            }
        }
        Ok(())
    }

    /// Records this layer on a graph. `x` is batched.
    pub fn record(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        let sample_shape = g.value(x).shape()[1..].to_vec();
        self.output_shape(&sample_shape)?;
        match *self {
            LayerSpec::Linear { .. } => g.linear(x, params[0], params[1]),
            LayerSpec::Conv2d { .. } => g.conv2d(x, params[0], params[1]),
            LayerSpec::MaxPool2d { size } => g.max_pool(x, size),
            LayerSpec::Relu => Ok(g.relu(x)),
            LayerSpec::Flatten => g.flatten(x),
        }
    }
}

/// Evaluates one layer on a batched input without recording a graph.
pub fn layer_forward(layer: &LayerSpec, params: &[&Tensor], input: &Tensor) -> Result<Tensor> {
    layer.check_params(params)?;
    let shape = input.shape();
    if shape.is_empty() {
        return Err(Error::shape(format!("{layer:?} input"), &[1], shape));
    }
    let n = shape[0];
    let out = layer.output_shape(&shape[1..])?;
    let mut full = vec![n];
    full.extend_from_slice(&out);
    let data = match *layer {
        LayerSpec::Linear { input: i, output } => {
            tensor::linear_forward(input.data(), params[0].data(), params[1].data(), n, i, output)
        }
        LayerSpec::Conv2d {
            kernel,
            in_channels,
            out_channels,
        } => tensor::conv2d_forward(
            input.data(),
            params[0].data(),
            params[1].data(),
            ConvGeometry {
                batch: n,
                height: shape[1],
                width: shape[2],
                in_channels,
                kernel,
                out_channels,
            },
        ),
        LayerSpec::MaxPool2d { size } => {
            tensor::max_pool_forward(input.data(), n, shape[1], shape[2], shape[3], size).0
        }
        LayerSpec::Relu => input.data().iter().map(|&v| tensor::relu(v)).collect(),
        LayerSpec::Flatten => input.data().to_vec(),
    };
    Tensor::new(full, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_linear() {
        let layer = LayerSpec::Linear { input: 3, output: 3 };
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let bias = Tensor::zeros(&[3]);
        let v = Tensor::new(vec![1, 3], vec![0.5, -1.5, 2.0]).unwrap();
        assert_eq!(layer_forward(&layer, &[&eye, &bias], &v).unwrap(), v);
    }

    #[test]
    fn relu_definition() {
        let v = Tensor::new(vec![1, 3], vec![-1.0, 2.0, 0.0]).unwrap();
        let y = layer_forward(&LayerSpec::Relu, &[], &v).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let layer = LayerSpec::Linear { input: 4, output: 2 };
        let w = Tensor::zeros(&[4, 2]);
        let b = Tensor::zeros(&[2]);
        let v = Tensor::zeros(&[1, 3]);
        let err = layer_forward(&layer, &[&w, &b], &v).unwrap_err();
        assert!(err.to_string().contains("Linear"), "{err}");

        let wrong_w = Tensor::zeros(&[3, 2]);
        assert!(layer_forward(&layer, &[&wrong_w, &b], &Tensor::zeros(&[1, 4])).is_err());
    }

    #[test]
    fn conv_pool_output_shape() {
        // 32 − 5 + 1 = 28, pooled to 14
        let conv = LayerSpec::Conv2d {
            kernel: 5,
            in_channels: 3,
            out_channels: 6,
        };
        let pool = LayerSpec::MaxPool2d { size: 2 };
        let after_conv = conv.output_shape(&[32, 32, 3]).unwrap();
        assert_eq!(after_conv, vec![28, 28, 6]);
        assert_eq!(pool.output_shape(&after_conv).unwrap(), vec![14, 14, 6]);

        let mut rng = rand::rngs::mock::StepRng::new(1, 1);
        let params = conv.init_params(&mut rng);
        let x = Tensor::zeros(&[2, 32, 32, 3]);
        let y = layer_forward(&conv, &[&params[0], &params[1]], &x).unwrap();
        let y = layer_forward(&pool, &[], &y).unwrap();
        assert_eq!(y.shape(), &[2, 14, 14, 6]);
    }
}
