//! Network representation, forward and backward passes.
//!
//! Activations are batch-first and always carry a `(channels, height, width)`
//! feature shape; fully connected features are `(n, 1, 1)`. Linear weights are
//! stored `in x out` so a layer computes `y = x W + b`. Convolutions are
//! cross-correlations with zero padding and an integer stride.

mod arch;
mod backward;
mod forward;

pub use arch::{appendix_a_network, conv_layer, linear_layer, mlp, resblock, resnet18c};
pub use backward::backward;
pub use forward::{forward, forward_trace, relu, ActivationTrace};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor4};

/// Per-sample feature shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    /// Fully connected features.
    pub const fn flat(features: usize) -> Self {
        Self::new(features, 1, 1)
    }

    pub const fn spatial(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A batch of activations, row-major `(batch, channels, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub batch: usize,
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Activations {
    pub fn new(batch: usize, shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * shape.len() {
            return Err(Error::Shape(format!(
                "{batch} samples of shape {shape} need {} values, got {}",
                batch * shape.len(),
                data.len()
            )));
        }
        Ok(Self { batch, shape, data })
    }

    pub fn zeros(batch: usize, shape: Shape) -> Self {
        Self {
            batch,
            shape,
            data: vec![0.0; batch * shape.len()],
        }
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.shape.len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn max_abs_diff(&self, other: &Activations) -> Result<f64> {
        if self.batch != other.batch || self.shape != other.shape {
            return Err(Error::Shape(format!(
                "comparing {}x{} with {}x{}",
                self.batch, self.shape, other.batch, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Storage precision of a network's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub const fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    /// Rounds a value to what this dtype can store.
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            Dtype::F32 => v as f32 as f64,
            Dtype::F64 => v,
        }
    }
}

/// Fully connected layer, `y = x W + b` with `W` of shape `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
}

impl Linear {
    pub fn in_features(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_features(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor4,
    pub bias: Option<Vec<f64>>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let w = &self.weight;
        if input.channels != w.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                w.in_channels(),
                input.channels
            )));
        }
        if self.stride == 0 {
            return Err(Error::Shape("conv stride must be positive".into()));
        }
        let span = |n: usize, k: usize| -> Result<usize> {
            let padded = n + 2 * self.padding;
            if padded < k {
                return Err(Error::Shape(format!(
                    "kernel {k} larger than padded input {padded}"
                )));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok(Shape::new(
            w.out_channels(),
            span(input.height, w.kernel_h())?,
            span(input.width, w.kernel_w())?,
        ))
    }
}

/// Residual block with a learned 1x1 shortcut:
/// `conv2(relu(conv1(x))) + skip(x)`, no activation after the sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlockC {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub skip: Conv2d,
}

impl ResBlockC {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if self.skip.weight.kernel_h() != 1 || self.skip.weight.kernel_w() != 1 {
            return Err(Error::Shape("block shortcut must be a 1x1 convolution".into()));
        }
        let hidden = self.conv1.output_shape(input)?;
        let main = self.conv2.output_shape(hidden)?;
        let short = self.skip.output_shape(input)?;
        if main != short {
            return Err(Error::Shape(format!(
                "block branches disagree: main {main}, shortcut {short}"
            )));
        }
        Ok(main)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Linear),
    Conv2d(Conv2d),
    Relu,
    MaxPool2d { kernel: usize, stride: usize },
    Flatten,
    ResBlockC(ResBlockC),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Linear(_) => "linear",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Flatten => "flatten",
            Layer::ResBlockC(_) => "resblock_c",
        }
    }

    /// Whether the layer carries weights that take part in balancing.
    pub fn is_parameterized(&self) -> bool {
        matches!(self, Layer::Linear(_) | Layer::Conv2d(_) | Layer::ResBlockC(_))
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Layer::Linear(l) => {
                if input.spatial() != 1 {
                    return Err(Error::Shape(format!(
                        "linear layer needs flat input, got {input} (insert a flatten layer)"
                    )));
                }
                if input.channels != l.in_features() {
                    return Err(Error::Shape(format!(
                        "linear expects {} features, got {}",
                        l.in_features(),
                        input.channels
                    )));
                }
                Ok(Shape::flat(l.out_features()))
            }
            Layer::Conv2d(c) => c.output_shape(input),
            Layer::Relu => Ok(input),
            Layer::MaxPool2d { kernel, stride } => {
                if *kernel == 0 || *stride == 0 {
                    return Err(Error::Shape("pooling kernel and stride must be positive".into()));
                }
                if input.height < *kernel || input.width < *kernel {
                    return Err(Error::Shape(format!(
                        "pooling kernel {kernel} larger than input {input}"
                    )));
                }
                Ok(Shape::new(
                    input.channels,
                    (input.height - kernel) / stride + 1,
                    (input.width - kernel) / stride + 1,
                ))
            }
            Layer::Flatten => Ok(Shape::flat(input.len())),
            Layer::ResBlockC(b) => b.output_shape(input),
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        fn push<'a>(out: &mut Vec<&'a [f64]>, w: &'a [f64], b: &'a Option<Vec<f64>>) {
            out.push(w);
            if let Some(b) = b {
                out.push(b);
            }
        }
        let mut out = Vec::new();
        match self {
            Layer::Linear(l) => push(&mut out, l.weight.data(), &l.bias),
            Layer::Conv2d(c) => push(&mut out, c.weight.data(), &c.bias),
            Layer::ResBlockC(b) => {
                for c in [&b.conv1, &b.conv2, &b.skip] {
                    push(&mut out, c.weight.data(), &c.bias);
                }
            }
            _ => {}
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        fn push<'a>(out: &mut Vec<&'a mut [f64]>, w: &'a mut [f64], b: &'a mut Option<Vec<f64>>) {
            out.push(w);
            if let Some(b) = b {
                out.push(b);
            }
        }
        let mut out = Vec::new();
        match self {
            Layer::Linear(l) => push(&mut out, l.weight.data_mut(), &mut l.bias),
            Layer::Conv2d(c) => push(&mut out, c.weight.data_mut(), &mut c.bias),
            Layer::ResBlockC(b) => {
                let ResBlockC { conv1, conv2, skip } = b;
                for c in [conv1, conv2, skip] {
                    push(&mut out, c.weight.data_mut(), &mut c.bias);
                }
            }
            _ => {}
        }
        out
    }

    fn weights(&self) -> Vec<&[f64]> {
        match self {
            Layer::Linear(l) => vec![l.weight.data()],
            Layer::Conv2d(c) => vec![c.weight.data()],
            Layer::ResBlockC(b) => vec![b.conv1.weight.data(), b.conv2.weight.data(), b.skip.weight.data()],
            _ => Vec::new(),
        }
    }
}

/// An ordered stack of layers applied to inputs of `input_shape`.
///
/// The same type doubles as the container for parameter gradients and momentum
/// buffers: those hold one value per parameter, laid out like the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub input_shape: Shape,
    pub layers: Vec<Layer>,
    pub dtype: Dtype,
}

/// Network-shaped container of per-parameter gradients.
pub type Gradients = Network;

impl Network {
    /// Builds a network, checking that consecutive layer shapes compose.
    pub fn new(input_shape: Shape, layers: Vec<Layer>, dtype: Dtype) -> Result<Self> {
        let net = Self {
            input_shape,
            layers,
            dtype,
        };
        net.layer_shapes()?;
        Ok(net)
    }

    /// Output shape of every layer, in order.
    pub fn layer_shapes(&self) -> Result<Vec<Shape>> {
        let mut shape = self.input_shape;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(shape).map_err(|e| match e {
                Error::Shape(m) => Error::Shape(format!("layer {i} ({}): {m}", layer.kind())),
                other => other,
            })?;
            out.push(shape);
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<Shape> {
        Ok(self.layer_shapes()?.last().copied().unwrap_or(self.input_shape))
    }

    /// All parameter tensors (weights and biases) in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Layer::tensors_mut).collect()
    }

    /// Weight tensors only; biases are excluded.
    pub fn weight_tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::weights).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeros_like(&self) -> Network {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn same_architecture(&self, other: &Network) -> bool {
        self.input_shape == other.input_shape
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| match (a, b) {
                (Layer::Linear(x), Layer::Linear(y)) => {
                    x.weight.rows() == y.weight.rows()
                        && x.weight.cols() == y.weight.cols()
                        && x.bias.is_some() == y.bias.is_some()
                }
                (Layer::Conv2d(x), Layer::Conv2d(y)) => same_conv(x, y),
                (Layer::ResBlockC(x), Layer::ResBlockC(y)) => {
                    same_conv(&x.conv1, &y.conv1)
                        && same_conv(&x.conv2, &y.conv2)
                        && same_conv(&x.skip, &y.skip)
                }
                (a, b) => a == b,
            })
    }

    /// Rounds every parameter to the storage precision.
    pub fn round_to_dtype(&mut self) {
        let dtype = self.dtype;
        if dtype == Dtype::F64 {
            return;
        }
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = dtype.round(*v));
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

fn same_conv(a: &Conv2d, b: &Conv2d) -> bool {
    let (x, y) = (&a.weight, &b.weight);
    x.out_channels() == y.out_channels()
        && x.in_channels() == y.in_channels()
        && x.kernel_h() == y.kernel_h()
        && x.kernel_w() == y.kernel_w()
        && a.stride == b.stride
        && a.padding == b.padding
        && a.bias.is_some() == b.bias.is_some()
}
