//! Randomly initialized architectures.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use super::{Conv2d, Dtype, Layer, Linear, Network, ResBlockC, Shape};
use crate::error::Result;
use crate::tensor::{Matrix, Tensor4};

const BIAS_STD: f64 = 0.1;

fn he_normal(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn bias(rng: &mut impl Rng, n: usize, enabled: bool) -> Option<Vec<f64>> {
    enabled.then(|| {
        let dist = Normal::new(0.0, BIAS_STD).expect("valid std");
        (0..n).map(|_| dist.sample(rng)).collect()
    })
}

/// He-initialized fully connected layer.
pub fn linear_layer(inputs: usize, outputs: usize, with_bias: bool, rng: &mut impl Rng) -> Layer {
    let weight = Matrix::new(inputs, outputs, he_normal(rng, inputs, inputs * outputs))
        .expect("shape is consistent");
    Layer::Linear(Linear {
        weight,
        bias: bias(rng, outputs, with_bias),
    })
}

fn conv(
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    with_bias: bool,
    rng: &mut impl Rng,
) -> Conv2d {
    let fan_in = cin * kernel * kernel;
    let weight = Tensor4::new(cout, cin, kernel, kernel, he_normal(rng, fan_in, cout * fan_in))
        .expect("shape is consistent");
    Conv2d {
        weight,
        bias: bias(rng, cout, with_bias),
        stride,
        padding,
    }
}

/// He-initialized square-kernel convolution.
pub fn conv_layer(
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    with_bias: bool,
    rng: &mut impl Rng,
) -> Layer {
    Layer::Conv2d(conv(cin, cout, kernel, stride, padding, with_bias, rng))
}

/// Residual block: two 3x3 convolutions and a learned 1x1 shortcut, the first
/// convolution and the shortcut carrying `stride`.
pub fn resblock(cin: usize, cout: usize, stride: usize, with_bias: bool, rng: &mut impl Rng) -> Layer {
    Layer::ResBlockC(ResBlockC {
        conv1: conv(cin, cout, 3, stride, 1, with_bias, rng),
        conv2: conv(cout, cout, 3, 1, 1, with_bias, rng),
        skip: conv(cin, cout, 1, stride, 0, with_bias, rng),
    })
}

/// `Linear - ReLU - ... - Linear` over the given layer widths.
pub fn mlp(sizes: &[usize], with_bias: bool, rng: &mut impl Rng) -> Result<Network> {
    let mut layers = Vec::new();
    for (k, pair) in sizes.windows(2).enumerate() {
        if k > 0 {
            layers.push(Layer::Relu);
        }
        layers.push(linear_layer(pair[0], pair[1], with_bias, rng));
    }
    Network::new(Shape::flat(sizes.first().copied().unwrap_or(0)), layers, Dtype::F64)
}

/// Deep square MLP with Xavier-uniform weights whose 6th layer is multiplied
/// by 1.2 and 12th layer by 0.8, leaving the network deliberately unbalanced.
pub fn appendix_a_network(depth: usize, width: usize, rng: &mut impl Rng) -> Result<Network> {
    let bound = (6.0 / (2 * width) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    let mut layers = Vec::new();
    for k in 1..=depth {
        if k > 1 {
            layers.push(Layer::Relu);
        }
        let factor = match k {
            6 => 1.2,
            12 => 0.8,
            _ => 1.0,
        };
        let data = (0..width * width).map(|_| factor * dist.sample(rng)).collect();
        layers.push(Layer::Linear(Linear {
            weight: Matrix::new(width, width, data)?,
            bias: None,
        }));
    }
    Network::new(Shape::flat(width), layers, Dtype::F64)
}

/// ResNet-18 with learned 1x1 shortcuts on every block (type C), for
/// 3x224x224 inputs. Global pooling is realized as a max-pool over the final
/// 7x7 map, which commutes with per-channel rescaling.
pub fn resnet18c(classes: usize, rng: &mut impl Rng) -> Result<Network> {
    let mut layers = vec![
        conv_layer(3, 64, 7, 2, 3, false, rng),
        Layer::Relu,
        Layer::MaxPool2d { kernel: 3, stride: 2 },
    ];
    let mut cin = 64;
    for (stage, &width) in [64usize, 128, 256, 512].iter().enumerate() {
        for blk in 0..2 {
            let stride = if stage > 0 && blk == 0 { 2 } else { 1 };
            layers.push(resblock(cin, width, stride, false, rng));
            layers.push(Layer::Relu);
            cin = width;
        }
    }
    layers.push(Layer::MaxPool2d { kernel: 7, stride: 7 });
    layers.push(Layer::Flatten);
    layers.push(linear_layer(512, classes, false, rng));
    Network::new(Shape::new(3, 224, 224), layers, Dtype::F32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resnet18c_shapes() {
        let net = resnet18c(1000, &mut crate::rng(0)).unwrap();
        let shapes = net.layer_shapes().unwrap();
        assert_eq!(shapes[shapes.len() - 4], Shape::new(512, 7, 7));
        assert_eq!(net.output_shape().unwrap(), Shape::flat(1000));
    }

    #[test]
    fn appendix_a_layers_are_scaled() {
        let net = appendix_a_network(12, 20, &mut crate::rng(0)).unwrap();
        let bound = (6.0f64 / 40.0).sqrt();
        let max_abs = |k: usize| {
            net.weight_tensors()[k - 1]
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
        };
        assert!(max_abs(6) > bound && max_abs(6) <= 1.2 * bound);
        assert!(max_abs(12) <= 0.8 * bound);
    }
}
