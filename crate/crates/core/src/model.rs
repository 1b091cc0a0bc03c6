//! The local network: base encoder → projection head → output layer.
//!
//! The encoder is either an MLP or the small CNN (two 5×5 convolutions, each
//! followed by ReLU and 2×2 max pooling, then fully connected layers with
//! ReLU). The projection head is a two-layer perceptron whose hidden width
//! equals the encoder output width, with ReLU between the layers and nothing
//! after the last one. The output layer is a single linear map.
//!
//! Entries for the encoder and the projection head form the feature
//! extractor; the output layer's weight and bias come last, after
//! [`ModelParameters::partition_marker`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{layer_forward, LayerSpec};
use crate::params::ModelParameters;
use crate::tensor::{max_pool_forward, Tensor};

pub const DEFAULT_PROJECTION_DIM: usize = 256;
pub const CNN_KERNEL: usize = 5;
pub const CNN_POOL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Mlp,
    SmallCnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub encoder: EncoderKind,
    /// `[P]` for the MLP, `[H, W, C]` for the CNN.
    pub input_shape: Vec<usize>,
    /// MLP hidden widths, or the CNN's fully connected widths.
    pub hidden_dims: Vec<usize>,
    pub projection_dim: usize,
    pub num_classes: usize,
    /// Output channels of the two CNN convolutions; ignored by the MLP.
    pub conv_channels: [usize; 2],
}

impl NetworkSpec {
    pub fn mlp(input_dim: usize, hidden_dims: Vec<usize>, projection_dim: usize, num_classes: usize) -> Self {
        NetworkSpec {
            encoder: EncoderKind::Mlp,
            input_shape: vec![input_dim],
            hidden_dims,
            projection_dim,
            num_classes,
            conv_channels: [6, 16],
        }
    }

    /// The small CNN with 6 and 16 channels.
    pub fn small_cnn(input_shape: [usize; 3], fc_dims: Vec<usize>, projection_dim: usize, num_classes: usize) -> Self {
        NetworkSpec {
            encoder: EncoderKind::SmallCnn,
            input_shape: input_shape.to_vec(),
            hidden_dims: fc_dims,
            projection_dim,
            num_classes,
            conv_channels: [6, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardActivations {
    /// Encoder output.
    pub r: Tensor,
    /// Projected representation.
    pub z: Tensor,
    /// Class logits.
    pub s: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct Placed {
    layer: LayerSpec,
    first_param: usize,
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    encoder: Vec<Placed>,
    projection: Vec<Placed>,
    output: Placed,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    marker: usize,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        if spec.projection_dim == 0 {
            return Err(Error::Config("projection dimension must be positive".into()));
        }
        if spec.num_classes == 0 {
            return Err(Error::Config("number of classes must be positive".into()));
        }
        if spec.input_shape.contains(&0) || spec.hidden_dims.contains(&0) {
            return Err(Error::Config("network dimensions must be positive".into()));
        }

        let mut encoder_layers = Vec::new();
        let mut shape = spec.input_shape.clone();
        match spec.encoder {
            EncoderKind::Mlp => {
                if shape.len() != 1 {
                    return Err(Error::Config(format!("mlp encoder needs a flat input, got {shape:?}")));
                }
            }
            EncoderKind::SmallCnn => {
                if shape.len() != 3 {
                    return Err(Error::Config(format!(
                        "small_cnn encoder needs [H, W, C] input, got {shape:?}"
                    )));
                }
                let mut channels = shape[2];
                for &out in &spec.conv_channels {
                    if out == 0 {
                        return Err(Error::Config("conv channels must be positive".into()));
                    }
                    encoder_layers.push(LayerSpec::Conv2d {
                        kernel: CNN_KERNEL,
                        in_channels: channels,
                        out_channels: out,
                    });
                    encoder_layers.push(LayerSpec::Relu);
                    encoder_layers.push(LayerSpec::MaxPool2d { size: CNN_POOL });
                    channels = out;
                }
                encoder_layers.push(LayerSpec::Flatten);
            }
        }
        for layer in &encoder_layers {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::Config(format!("input {:?} too small for the CNN: {e}", spec.input_shape)))?;
        }
        let mut width = shape[0];
        for &h in &spec.hidden_dims {
            encoder_layers.push(LayerSpec::Linear {
                input: width,
                output: h,
            });
            encoder_layers.push(LayerSpec::Relu);
            width = h;
        }
        let projection_layers = vec![
            LayerSpec::Linear {
                input: width,
                output: width,
            },
            LayerSpec::Relu,
            LayerSpec::Linear {
                input: width,
                output: spec.projection_dim,
            },
        ];
        let output_layer = LayerSpec::Linear {
            input: spec.projection_dim,
            output: spec.num_classes,
        };

        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut place = |prefix: &str, layers: Vec<LayerSpec>| -> Vec<Placed> {
            layers
                .into_iter()
                .enumerate()
                .map(|(i, layer)| {
                    let first_param = names.len();
                    for (shape, suffix) in layer.param_shapes().into_iter().zip(["weight", "bias"]) {
                        names.push(if prefix == "output" {
                            format!("output.{suffix}")
                        } else {
                            format!("{prefix}.{i}.{suffix}")
                        });
                        shapes.push(shape);
                    }
                    Placed { layer, first_param }
                })
                .collect()
        };
        let encoder = place("encoder", encoder_layers);
        let projection = place("projection", projection_layers);
        let marker_probe = place("output", vec![output_layer]);
        let output = marker_probe[0];
        let marker = output.first_param;

        Ok(Network {
            spec,
            encoder,
            projection,
            output,
            names,
            shapes,
            marker,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Fresh parameters drawn deterministically from `seed`.
    pub fn init_params(&self, seed: u64) -> ModelParameters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::with_capacity(self.names.len());
        for placed in self
            .encoder
            .iter()
            .chain(&self.projection)
            .chain(std::iter::once(&self.output))
        {
            for t in placed.layer.init_params(&mut rng) {
                entries.push((self.names[entries.len()].clone(), t));
            }
        }
        ModelParameters::new(entries, self.marker).expect("marker within entries")
    }

    pub fn check_params(&self, params: &ModelParameters) -> Result<()> {
        let ok = params.len() == self.names.len()
            && params.partition_marker() == self.marker
            && params
                .entries()
                .iter()
                .zip(self.names.iter().zip(&self.shapes))
                .all(|((n, t), (en, es))| n == en && t.shape() == es.as_slice());
        if ok {
            Ok(())
        } else {
            Err(Error::Usage("parameters do not match the network layout".into()))
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.spec.input_shape.len() + 1 || x.shape()[1..] != self.spec.input_shape[..] {
            let mut expected = vec![0];
            expected.extend_from_slice(&self.spec.input_shape);
            return Err(Error::shape("network input", &expected, x.shape()));
        }
        Ok(())
    }

    fn run(&self, layers: &[Placed], params: &ModelParameters, x: Tensor) -> Result<Tensor> {
        self.run_traced(layers, params, x, None)
    }

    fn run_traced(
        &self,
        layers: &[Placed],
        params: &ModelParameters,
        mut x: Tensor,
        mut pattern: Option<&mut Vec<u64>>,
    ) -> Result<Tensor> {
        for placed in layers {
            let n = placed.layer.num_param_entries();
            let slice: Vec<&Tensor> = (0..n).map(|j| params.tensor(placed.first_param + j)).collect();
            if let Some(p) = pattern.as_deref_mut() {
                match placed.layer {
                    LayerSpec::Relu => p.extend(x.data().iter().map(|&v| u64::from(v > 0.0))),
                    LayerSpec::MaxPool2d { size } => {
                        let s = x.shape();
                        let (_, arg) = max_pool_forward(x.data(), s[0], s[1], s[2], s[3], size);
                        p.extend(arg.into_iter().map(|a| a as u64));
                    }
                    _ => {}
                }
            }
            x = layer_forward(&placed.layer, &slice, &x)?;
        }
        Ok(x)
    }

    /// Evaluates `x` (batched) through all three stages.
    pub fn forward_full(&self, params: &ModelParameters, x: &Tensor) -> Result<ForwardActivations> {
        self.check_params(params)?;
        self.check_input(x)?;
        let r = self.run(&self.encoder, params, x.clone())?;
        let z = self.run(&self.projection, params, r.clone())?;
        let s = self.run(std::slice::from_ref(&self.output), params, z.clone())?;
        Ok(ForwardActivations { r, z, s })
    }

    /// Like [`Network::forward_full`], also returning the piecewise-linear
    /// branch taken at every ReLU and max-pool unit. Two inputs with equal
    /// patterns lie in the same smooth region of the network.
    pub fn forward_with_pattern(&self, params: &ModelParameters, x: &Tensor) -> Result<(ForwardActivations, Vec<u64>)> {
        self.check_params(params)?;
        self.check_input(x)?;
        let mut pattern = Vec::new();
        let r = self.run_traced(&self.encoder, params, x.clone(), Some(&mut pattern))?;
        let z = self.run_traced(&self.projection, params, r.clone(), Some(&mut pattern))?;
        let s = self.run(std::slice::from_ref(&self.output), params, z.clone())?;
        Ok((ForwardActivations { r, z, s }, pattern))
    }

    /// The projected representation `z` only.
    pub fn extract_representation(&self, params: &ModelParameters, x: &Tensor) -> Result<Tensor> {
        self.check_params(params)?;
        self.check_input(x)?;
        let r = self.run(&self.encoder, params, x.clone())?;
        self.run(&self.projection, params, r)
    }

    /// Applies the output layer alone to representations `z`.
    pub fn classify(&self, params: &ModelParameters, z: &Tensor) -> Result<Tensor> {
        self.check_params(params)?;
        self.run(std::slice::from_ref(&self.output), params, z.clone())
    }

    /// Records a forward pass on `g`, returning `(r, z, s)`.
    pub fn record(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<(Var, Var, Var)> {
        if params.len() != self.names.len() {
            return Err(Error::Usage(
                "parameter variables do not match the network layout".into(),
            ));
        }
        let stage = |g: &mut Graph, layers: &[Placed], mut v: Var| -> Result<Var> {
            for placed in layers {
                let n = placed.layer.num_param_entries();
                v = placed
                    .layer
                    .record(g, &params[placed.first_param..placed.first_param + n], v)?;
            }
            Ok(v)
        };
        let r = stage(g, &self.encoder, x)?;
        let z = stage(g, &self.projection, r)?;
        let s = stage(g, std::slice::from_ref(&self.output), z)?;
        Ok((r, z, s))
    }
}

/// Builds the network for `spec` and draws its initial parameters.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<ModelParameters> {
    Ok(Network::new(spec.clone())?.init_params(seed))
}
