//! Sequential convolutional networks: layer descriptors, parameters and the
//! forward pass.

mod ops;

pub use ops::{conv2d_forward, dense_forward, maxpool2d_forward, relu_forward, softmax_forward, ConvGeometry};

use crate::error::{ensure, Result};
use crate::rng::XorShiftRng;
use crate::{Scalar, Tensor};

/// Input side length of the full-size classifier.
pub const COVER_INPUT_SIZE: usize = 112;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Zero padding so that `out = ceil(in / stride)`; odd padding totals put
    /// the extra row/column at the bottom/right.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    Conv2d { kernel_h: usize, kernel_w: usize, filters: usize, stride: usize, padding: Padding },
    /// 2×2 window, stride 2.
    MaxPool2d,
    Relu,
    Flatten,
    Dense { units: usize },
    Softmax,
}

impl LayerSpec {
    pub fn conv(kernel: usize, filters: usize) -> Self {
        LayerSpec::Conv2d { kernel_h: kernel, kernel_w: kernel, filters, stride: 1, padding: Padding::Same }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d => "maxpool2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    pub fn conv_geometry(&self, input_shape: &[usize]) -> Result<Option<ConvGeometry>> {
        match *self {
            LayerSpec::Conv2d { kernel_h, kernel_w, filters, stride, padding } => {
                ConvGeometry::new(input_shape, kernel_h, kernel_w, filters, stride, padding).map(Some)
            }
            _ => Ok(None),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d { .. } => Ok(self.conv_geometry(input)?.unwrap().output_shape().to_vec()),
            LayerSpec::MaxPool2d => {
                ensure!(input.len() == 3, "maxpool2d input must be H×W×C, got {input:?}");
                ensure!(input[0] >= 2 && input[1] >= 2, "maxpool2d input {input:?} smaller than its 2×2 window");
                Ok(vec![input[0] / 2, input[1] / 2, input[2]])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { units } => {
                ensure!(units > 0, "dense unit count must be positive");
                ensure!(input.len() == 1, "dense input must be a vector, got {input:?} (missing flatten?)");
                Ok(vec![units])
            }
            LayerSpec::Softmax => {
                ensure!(input.len() == 1, "softmax input must be a vector, got {input:?}");
                Ok(input.to_vec())
            }
        }
    }

    /// Weight and bias shapes for a layer with the given input shape.
    pub fn param_shapes(&self, input: &[usize]) -> Result<Option<(Vec<usize>, Vec<usize>)>> {
        Ok(match *self {
            LayerSpec::Conv2d { filters, .. } => {
                let geo = self.conv_geometry(input)?.unwrap();
                Some((geo.weight_shape().to_vec(), vec![filters]))
            }
            LayerSpec::Dense { units } => Some((vec![input.iter().product(), units], vec![units])),
            _ => None,
        })
    }
}

/// Weights and bias of one parameterised layer (also used for gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T = f32> {
    pub spec: LayerSpec,
    pub params: Option<Params<T>>,
}

/// Recorded forward pass: the input activation of every layer plus the pool
/// winner indices, enough to run backprop or relevance propagation.
#[derive(Debug, Clone)]
pub struct Trace<T = f32> {
    pub inputs: Vec<Tensor<T>>,
    pub pool_argmax: Vec<Option<Vec<usize>>>,
    pub output: Tensor<T>,
}

impl<T: Scalar> Trace<T> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Pre-softmax scores (the input of the final softmax layer).
    pub fn logits(&self) -> &Tensor<T> {
        self.inputs.last().expect("trace of a validated network is never empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    input_shape: [usize; 3],
    layers: Vec<Layer<T>>,
    /// `shapes[k]` is the input shape of layer `k`; the last entry is the output.
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Network<T> {
    /// Network with zero weights and biases.
    pub fn new(input_shape: [usize; 3], specs: &[LayerSpec]) -> Result<Self> {
        let shapes = Self::trace_shapes(input_shape, specs)?;
        let layers = specs
            .iter()
            .zip(&shapes)
            .map(|(spec, shape)| {
                let params = spec.param_shapes(shape)?.map(|(w, b)| Params {
                    weights: Tensor::zeros(&w),
                    bias: Tensor::zeros(&b),
                });
                Ok(Layer { spec: *spec, params })
            })
            .collect::<Result<_>>()?;
        Ok(Self { input_shape, layers, shapes })
    }

    /// Network from explicit layers; parameter shapes are checked.
    pub fn from_layers(input_shape: [usize; 3], layers: Vec<Layer<T>>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        let shapes = Self::trace_shapes(input_shape, &specs)?;
        for (k, (layer, shape)) in layers.iter().zip(&shapes).enumerate() {
            match (layer.spec.param_shapes(shape)?, &layer.params) {
                (None, None) => {}
                (Some((w, b)), Some(p)) => {
                    ensure!(
                        p.weights.shape() == &w[..],
                        "layer {k} ({}): weight shape {:?}, expected {w:?}",
                        layer.spec.name(),
                        p.weights.shape()
                    );
                    ensure!(
                        p.bias.shape() == &b[..],
                        "layer {k} ({}): bias shape {:?}, expected {b:?}",
                        layer.spec.name(),
                        p.bias.shape()
                    );
                }
                (Some(_), None) => return Err(crate::Error::invalid(format!("layer {k} is missing its parameters"))),
                (None, Some(_)) => {
                    return Err(crate::Error::invalid(format!("layer {k} ({}) takes no parameters", layer.spec.name())))
                }
            }
        }
        Ok(Self { input_shape, layers, shapes })
    }

    fn trace_shapes(input_shape: [usize; 3], specs: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
        ensure!(input_shape.iter().all(|&d| d > 0), "input shape {input_shape:?} must be positive");
        ensure!(!specs.is_empty(), "network has no layers");
        let softmaxes = specs.iter().filter(|s| **s == LayerSpec::Softmax).count();
        ensure!(
            softmaxes == 1 && specs.last() == Some(&LayerSpec::Softmax),
            "network must contain exactly one softmax layer, as the last layer"
        );
        let mut shapes = vec![input_shape.to_vec()];
        for (k, spec) in specs.iter().enumerate() {
            let next = spec
                .output_shape(shapes.last().unwrap())
                .map_err(|e| crate::Error::invalid(format!("layer {k} ({}): {e}", spec.name())))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_glorot(&mut self, seed: u64) {
        let mut rng = XorShiftRng::new(seed);
        for layer in &mut self.layers {
            let Some(params) = layer.params.as_mut() else { continue };
            let (fan_in, fan_out) = match layer.spec {
                LayerSpec::Conv2d { kernel_h, kernel_w, filters, .. } => {
                    let taps = kernel_h * kernel_w;
                    (taps * params.weights.shape()[2], taps * filters)
                }
                LayerSpec::Dense { units } => (params.weights.shape()[0], units),
                _ => unreachable!(),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in params.weights.data_mut() {
                *w = T::from_f64(rng.uniform(-limit, limit));
            }
            params.bias.data_mut().iter_mut().for_each(|b| *b = T::zero());
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<T>> {
        self.layers.iter_mut()
    }

    /// Input shape of layer `k`, or the network output shape for `k == len`.
    pub fn shape_at(&self, k: usize) -> &[usize] {
        &self.shapes[k]
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn conv_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l.spec, LayerSpec::Conv2d { .. })).count()
    }

    pub fn pool_count(&self) -> usize {
        self.layers.iter().filter(|l| l.spec == LayerSpec::MaxPool2d).count()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape,
            shapes: self.shapes.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    params: l.params.as_ref().map(|p| Params { weights: p.weights.cast(), bias: p.bias.cast() }),
                })
                .collect(),
        }
    }

    pub fn zero_biases(&mut self) {
        for p in self.layers.iter_mut().filter_map(|l| l.params.as_mut()) {
            p.bias.data_mut().iter_mut().for_each(|b| *b = T::zero());
        }
    }

    /// Runs layer `k` alone. Pool layers also return their winner indices.
    pub fn forward_layer(&self, k: usize, input: &Tensor<T>) -> Result<(Tensor<T>, Option<Vec<usize>>)> {
        let layer = &self.layers[k];
        ensure!(
            input.shape() == &self.shapes[k][..],
            "layer {k} ({}) expects input shape {:?}, got {:?}",
            layer.spec.name(),
            self.shapes[k],
            input.shape()
        );
        Ok(match layer.spec {
            LayerSpec::Conv2d { stride, padding, .. } => {
                let p = layer.params.as_ref().unwrap();
                (conv2d_forward(input, &p.weights, &p.bias, stride, padding)?, None)
            }
            LayerSpec::MaxPool2d => {
                let (out, arg) = maxpool2d_forward(input)?;
                (out, Some(arg))
            }
            LayerSpec::Relu => (relu_forward(input), None),
            LayerSpec::Flatten => (input.clone().reshape(&self.shapes[k + 1])?, None),
            LayerSpec::Dense { .. } => {
                let p = layer.params.as_ref().unwrap();
                (dense_forward(input, &p.weights, &p.bias)?, None)
            }
            LayerSpec::Softmax => (softmax_forward(input), None),
        })
    }

    /// Class probabilities plus the full activation trace.
    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>)> {
        ensure!(
            input.shape() == &self.input_shape[..],
            "network expects input shape {:?}, got {:?}",
            self.input_shape,
            input.shape()
        );
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pool_argmax = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for k in 0..self.layers.len() {
            let (next, arg) = self.forward_layer(k, &current)?;
            inputs.push(current);
            pool_argmax.push(arg);
            current = next;
        }
        let probs = current.clone();
        Ok((probs, Trace { inputs, pool_argmax, output: current }))
    }

    pub fn predict(&self, input: &Tensor<T>) -> Result<usize> {
        Ok(self.forward(input)?.0.argmax())
    }
}

/// The full-size classifier for 112×112×3 inputs: six same-padded
/// convolutions (5×5×10, 5×5×10, 5×5×10, 4×4×25, 3×3×50, 1×1×100), each
/// followed by ReLU and all but the last by 2×2 max pooling, then a dense
/// head and softmax. Parameters start at zero; see [`Network::init_glorot`].
pub fn build_cover_network<T: Scalar>(num_classes: usize) -> Result<Network<T>> {
    ensure!(num_classes >= 2, "need at least 2 classes, got {num_classes}");
    let mut specs = Vec::new();
    let convs = [(5, 10), (5, 10), (5, 10), (4, 25), (3, 50), (1, 100)];
    for (i, &(kernel, filters)) in convs.iter().enumerate() {
        specs.push(LayerSpec::conv(kernel, filters));
        specs.push(LayerSpec::Relu);
        if i + 1 < convs.len() {
            specs.push(LayerSpec::MaxPool2d);
        }
    }
    specs.extend([LayerSpec::Flatten, LayerSpec::Dense { units: num_classes }, LayerSpec::Softmax]);
    Network::new([COVER_INPUT_SIZE, COVER_INPUT_SIZE, 3], &specs)
}

/// Scaled-down variant for small inputs: two 5×5×10 convolutions with ReLU
/// and pooling, then the dense head.
pub fn build_compact_network<T: Scalar>(input_shape: [usize; 3], num_classes: usize) -> Result<Network<T>> {
    ensure!(num_classes >= 2, "need at least 2 classes, got {num_classes}");
    Network::new(
        input_shape,
        &[
            LayerSpec::conv(5, 10),
            LayerSpec::Relu,
            LayerSpec::MaxPool2d,
            LayerSpec::conv(5, 10),
            LayerSpec::Relu,
            LayerSpec::MaxPool2d,
            LayerSpec::Flatten,
            LayerSpec::Dense { units: num_classes },
            LayerSpec::Softmax,
        ],
    )
}
