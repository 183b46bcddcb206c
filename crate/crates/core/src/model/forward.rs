use super::{Activations, Conv2d, Layer, Linear, Network, ResBlockC, Shape};
use crate::error::{Error, Result};
use crate::exec;

/// Every intermediate output of one forward pass.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub input: Activations,
    /// Output of each layer, in layer order.
    pub outputs: Vec<Activations>,
    /// For residual blocks: the first convolution's output before and after
    /// its ReLU. `None` for every other layer.
    pub(crate) block_hidden: Vec<Option<(Activations, Activations)>>,
}

impl ActivationTrace {
    pub fn output(&self) -> &Activations {
        self.outputs.last().unwrap_or(&self.input)
    }

    /// Input seen by layer `i`.
    pub fn layer_input(&self, i: usize) -> &Activations {
        if i == 0 {
            &self.input
        } else {
            &self.outputs[i - 1]
        }
    }
}

/// Elementwise `max(x, 0)`.
pub fn relu(x: &Activations) -> Activations {
    Activations {
        batch: x.batch,
        shape: x.shape,
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Runs the network on a batch and returns its output.
pub fn forward(net: &Network, x: &Activations) -> Result<Activations> {
    check_input(net, x)?;
    let shapes = net.layer_shapes()?;
    let mut cur = x.clone();
    for (layer, &shape) in net.layers.iter().zip(&shapes) {
        cur = apply_layer(layer, &cur, shape)?.0;
    }
    Ok(cur)
}

/// Like [`forward`], keeping every intermediate activation.
pub fn forward_trace(net: &Network, x: &Activations) -> Result<ActivationTrace> {
    check_input(net, x)?;
    let shapes = net.layer_shapes()?;
    let mut outputs: Vec<Activations> = Vec::with_capacity(net.layers.len());
    let mut block_hidden = Vec::with_capacity(net.layers.len());
    for (layer, &shape) in net.layers.iter().zip(&shapes) {
        let input = outputs.last().unwrap_or(x);
        let (out, hidden) = apply_layer(layer, input, shape)?;
        outputs.push(out);
        block_hidden.push(hidden);
    }
    Ok(ActivationTrace {
        input: x.clone(),
        outputs,
        block_hidden,
    })
}

fn check_input(net: &Network, x: &Activations) -> Result<()> {
    if x.shape != net.input_shape {
        return Err(Error::Shape(format!(
            "network expects inputs of shape {}, got {}",
            net.input_shape, x.shape
        )));
    }
    if x.data.len() != x.batch * x.shape.len() {
        return Err(Error::Shape("activation buffer length mismatch".into()));
    }
    Ok(())
}

type LayerOutput = (Activations, Option<(Activations, Activations)>);

fn apply_layer(layer: &Layer, x: &Activations, out_shape: Shape) -> Result<LayerOutput> {
    Ok(match layer {
        Layer::Linear(l) => (linear(l, x, out_shape), None),
        Layer::Conv2d(c) => (conv2d(c, x, out_shape), None),
        Layer::Relu => (relu(x), None),
        Layer::MaxPool2d { kernel, stride } => (maxpool(x, *kernel, *stride, out_shape), None),
        Layer::Flatten => (
            Activations {
                batch: x.batch,
                shape: out_shape,
                data: x.data.clone(),
            },
            None,
        ),
        Layer::ResBlockC(b) => {
            let (out, pre, post) = block(b, x, out_shape)?;
            (out, Some((pre, post)))
        }
    })
}

fn per_sample<F>(x: &Activations, out_shape: Shape, f: F) -> Activations
where
    F: Fn(&[f64], &mut [f64]) + Sync + Send,
{
    let mut out = Activations::zeros(x.batch, out_shape);
    if !out_shape.is_empty() {
        exec::for_each_chunk_mut(&mut out.data, out_shape.len(), |b, dst| f(x.sample(b), dst));
    }
    out
}

pub(crate) fn linear(l: &Linear, x: &Activations, out_shape: Shape) -> Activations {
    let cols = l.weight.cols();
    per_sample(x, out_shape, |src, dst| {
        match &l.bias {
            Some(b) => dst.copy_from_slice(b),
            None => dst.fill(0.0),
        }
        for (i, &v) in src.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (d, w) in dst.iter_mut().zip(l.weight.row(i)) {
                *d += v * w;
            }
        }
        debug_assert_eq!(dst.len(), cols);
    })
}

pub(crate) fn conv2d(c: &Conv2d, x: &Activations, out_shape: Shape) -> Activations {
    let ins = x.shape;
    per_sample(x, out_shape, |src, dst| conv_sample(c, ins, out_shape, src, dst))
}

fn conv_sample(c: &Conv2d, ins: Shape, outs: Shape, src: &[f64], dst: &mut [f64]) {
    let w = &c.weight;
    let (kh, kw) = (w.kernel_h(), w.kernel_w());
    let (s, pad) = (c.stride as isize, c.padding as isize);
    let (ih, iw) = (ins.height as isize, ins.width as isize);
    let plane = outs.spatial();
    for o in 0..outs.channels {
        let bias = c.bias.as_ref().map_or(0.0, |b| b[o]);
        let out_plane = &mut dst[o * plane..(o + 1) * plane];
        out_plane.fill(bias);
        for i in 0..ins.channels {
            let in_plane = &src[i * ins.spatial()..(i + 1) * ins.spatial()];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = w.get(o, i, ky, kx);
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..outs.height {
                        let y = oy as isize * s + ky as isize - pad;
                        if y < 0 || y >= ih {
                            continue;
                        }
                        let row = &in_plane[(y * iw) as usize..((y + 1) * iw) as usize];
                        let out_row = &mut out_plane[oy * outs.width..(oy + 1) * outs.width];
                        for (ox, d) in out_row.iter_mut().enumerate() {
                            let xx = ox as isize * s + kx as isize - pad;
                            if xx >= 0 && xx < iw {
                                *d += wv * row[xx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn maxpool(x: &Activations, kernel: usize, stride: usize, out_shape: Shape) -> Activations {
    let ins = x.shape;
    per_sample(x, out_shape, |src, dst| {
        for c in 0..ins.channels {
            for oy in 0..out_shape.height {
                for ox in 0..out_shape.width {
                    let (_, v) = pool_argmax(src, ins, c, oy, ox, kernel, stride);
                    dst[(c * out_shape.height + oy) * out_shape.width + ox] = v;
                }
            }
        }
    })
}

/// Index (within the sample) and value of the first maximum in a window.
pub(crate) fn pool_argmax(
    src: &[f64],
    ins: Shape,
    c: usize,
    oy: usize,
    ox: usize,
    kernel: usize,
    stride: usize,
) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for ky in 0..kernel {
        for kx in 0..kernel {
            let idx = (c * ins.height + oy * stride + ky) * ins.width + ox * stride + kx;
            if src[idx] > best.1 {
                best = (idx, src[idx]);
            }
        }
    }
    best
}

fn block(b: &ResBlockC, x: &Activations, out_shape: Shape) -> Result<(Activations, Activations, Activations)> {
    let hidden_shape = b.conv1.output_shape(x.shape)?;
    let pre = conv2d(&b.conv1, x, hidden_shape);
    let post = relu(&pre);
    let mut out = conv2d(&b.conv2, &post, out_shape);
    let short = conv2d(&b.skip, x, out_shape);
    for (o, s) in out.data.iter_mut().zip(&short.data) {
        *o += s;
    }
    Ok((out, pre, post))
}
