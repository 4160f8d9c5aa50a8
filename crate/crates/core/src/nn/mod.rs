//! Layers built on the tensor graph.
//!
//! A network is a list of [`LayerSpec`]s plus a [`ParameterSet`] holding
//! `layerNN.weight` / `layerNN.bias` tensors for the layers that have
//! parameters. Weights are initialised He-uniform, `U(-b, b)` with
//! `b = sqrt(6 / fan_in)`, from the crate's Xoshiro256++ stream; biases
//! start at zero.

mod functional;
mod params;

pub use functional::{cross_entropy, cross_entropy_node, softmax_t};
pub use params::{BoundParams, NamedGrads, ParameterSet};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Default negative slope of leaky ReLU in discriminators.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Deconv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Sigmoid,
    Tanh,
    SoftmaxT {
        temperature: f64,
    },
    /// `[N, ...] -> [N, prod(...)]`
    Flatten,
    /// `[N, k] -> [N, shape...]`
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            }
            | LayerSpec::Deconv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::invalid(format!(
                        "channels, kernel and stride must be >= 1 in {self:?}"
                    )));
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(Error::invalid(format!("dense layer sizes must be >= 1 in {self:?}")));
                }
            }
            LayerSpec::LeakyRelu { slope } if !slope.is_finite() => {
                return Err(Error::invalid("leaky_relu slope must be finite"));
            }
            LayerSpec::SoftmaxT { temperature } if !(temperature > 0.0) => {
                return Err(Error::invalid(format!("softmax temperature {temperature} must be > 0")));
            }
            LayerSpec::Reshape { ref shape } if shape.contains(&0) || shape.is_empty() => {
                return Err(Error::invalid(format!("bad reshape target {shape:?}")));
            }
            _ => {}
        }
        Ok(())
    }

    /// Weight and bias shapes, for layers with parameters.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((vec![out_channels, in_channels, kernel, kernel], vec![out_channels])),
            LayerSpec::Deconv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((vec![in_channels, out_channels, kernel, kernel], vec![out_channels])),
            LayerSpec::Dense { inputs, outputs } => Some((vec![inputs, outputs], vec![outputs])),
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            }
            | LayerSpec::Deconv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }
}

pub fn weight_name(layer: usize) -> String {
    format!("layer{layer:02}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("layer{layer:02}.bias")
}

/// Draws parameters for `specs` from `seed`. Weights are sampled layer by
/// layer in order; biases are exactly zero.
pub fn init_params(specs: &[LayerSpec], seed: u64) -> Result<ParameterSet> {
    let mut rng = rng_from_seed(seed);
    let mut set = ParameterSet::new(seed);
    for (i, spec) in specs.iter().enumerate() {
        spec.validate()?;
        let Some((wshape, bshape)) = spec.param_shapes() else {
            continue;
        };
        let bound = (6.0 / spec.fan_in() as f64).sqrt();
        let n: usize = wshape.iter().product();
        let w = (0..n)
            .map(|_| (2.0 * rng.random::<f64>() - 1.0) * bound)
            .collect();
        set.insert(weight_name(i), Tensor::new(wshape, w)?);
        set.insert(bias_name(i), Tensor::zeros(&bshape));
    }
    Ok(set)
}

/// Number of scalar parameters implied by `specs`, from shapes alone.
pub fn parameter_count(specs: &[LayerSpec]) -> usize {
    specs
        .iter()
        .filter_map(LayerSpec::param_shapes)
        .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
        .sum()
}

/// Runs `specs` over `x`, reading parameters from `params`.
pub fn forward(g: &mut Graph, specs: &[LayerSpec], params: &BoundParams, mut x: Var) -> Result<Var> {
    for (i, spec) in specs.iter().enumerate() {
        x = match *spec {
            LayerSpec::Conv2d { stride, padding, .. } => {
                let (w, b) = params.layer(i)?;
                g.conv2d(x, w, b, stride, padding)?
            }
            LayerSpec::Deconv2d { stride, padding, .. } => {
                let (w, b) = params.layer(i)?;
                g.deconv2d(x, w, b, stride, padding)?
            }
            LayerSpec::Dense { .. } => {
                let (w, b) = params.layer(i)?;
                let y = g.matmul(x, w)?;
                g.add_bias(y, b)?
            }
            LayerSpec::Relu => g.relu(x)?,
            LayerSpec::LeakyRelu { slope } => g.leaky_relu(x, slope)?,
            LayerSpec::Sigmoid => g.sigmoid(x)?,
            LayerSpec::Tanh => g.tanh(x)?,
            LayerSpec::SoftmaxT { temperature } => g.softmax_t(x, temperature)?,
            LayerSpec::Flatten => {
                let s = g.value(x).shape();
                let n = s[0];
                let rest = s[1..].iter().product();
                g.reshape(x, &[n, rest])?
            }
            LayerSpec::Reshape { ref shape } => {
                let n = g.value(x).shape()[0];
                let mut full = vec![n];
                full.extend_from_slice(shape);
                g.reshape(x, &full)?
            }
        };
    }
    Ok(x)
}
