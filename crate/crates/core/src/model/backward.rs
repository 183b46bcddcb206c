use super::forward::{pool_argmax, ActivationTrace};
use super::{Activations, Conv2d, Gradients, Layer, Linear, Network, Shape};
use crate::error::{Error, Result};
use crate::exec;

/// Samples per partial sum when reducing weight gradients over the batch.
const GRAD_CHUNK: usize = 8;

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient with respect to the network output.
pub fn backward(net: &Network, trace: &ActivationTrace, loss_grad: &Activations) -> Result<Gradients> {
    if trace.outputs.len() != net.layers.len() {
        return Err(Error::Shape("activation trace does not match the network".into()));
    }
    let out = trace.output();
    if loss_grad.batch != out.batch || loss_grad.shape != out.shape {
        return Err(Error::Shape(format!(
            "loss gradient {}x{} does not match output {}x{}",
            loss_grad.batch, loss_grad.shape, out.batch, out.shape
        )));
    }
    let mut grads = net.zeros_like();
    let mut g = loss_grad.clone();
    for (i, layer) in net.layers.iter().enumerate().rev() {
        let x = trace.layer_input(i);
        g = match (layer, &mut grads.layers[i]) {
            (Layer::Linear(l), Layer::Linear(gl)) => linear_backward(l, gl, x, &g),
            (Layer::Conv2d(c), Layer::Conv2d(gc)) => conv_backward(c, gc, x, &g),
            (Layer::Relu, _) => relu_backward(x, &g),
            (Layer::MaxPool2d { kernel, stride }, _) => maxpool_backward(x, &g, *kernel, *stride),
            (Layer::Flatten, _) => Activations {
                batch: g.batch,
                shape: x.shape,
                data: g.data,
            },
            (Layer::ResBlockC(b), Layer::ResBlockC(gb)) => {
                let (pre, post) = trace.block_hidden[i]
                    .as_ref()
                    .ok_or_else(|| Error::Shape("missing residual block activations".into()))?;
                let d_post = conv_backward(&b.conv2, &mut gb.conv2, post, &g);
                let d_pre = relu_backward(pre, &d_post);
                let mut dx = conv_backward(&b.conv1, &mut gb.conv1, x, &d_pre);
                let dskip = conv_backward(&b.skip, &mut gb.skip, x, &g);
                for (a, s) in dx.data.iter_mut().zip(&dskip.data) {
                    *a += s;
                }
                dx
            }
            _ => unreachable!("gradient container mirrors the network"),
        };
    }
    Ok(grads)
}

fn linear_backward(l: &Linear, grad: &mut Linear, x: &Activations, g: &Activations) -> Activations {
    let (rows, cols) = (l.weight.rows(), l.weight.cols());
    let dw = exec::chunked_sum(x.batch, GRAD_CHUNK, rows * cols, |range| {
        let mut part = vec![0.0; rows * cols];
        for b in range {
            let (xs, gs) = (x.sample(b), g.sample(b));
            for (i, &xv) in xs.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (p, &gv) in part[i * cols..(i + 1) * cols].iter_mut().zip(gs) {
                    *p += xv * gv;
                }
            }
        }
        part
    });
    grad.weight.data_mut().copy_from_slice(&dw);
    if let Some(db) = grad.bias.as_mut() {
        db.fill(0.0);
        for b in 0..g.batch {
            for (d, v) in db.iter_mut().zip(g.sample(b)) {
                *d += v;
            }
        }
    }
    let mut dx = Activations::zeros(x.batch, x.shape);
    exec::for_each_chunk_mut(&mut dx.data, rows, |b, dst| {
        let gs = g.sample(b);
        for (i, d) in dst.iter_mut().enumerate() {
            *d = l.weight.row(i).iter().zip(gs).map(|(w, gv)| w * gv).sum();
        }
    });
    dx
}

fn conv_backward(c: &Conv2d, grad: &mut Conv2d, x: &Activations, g: &Activations) -> Activations {
    let w = &c.weight;
    let (ins, outs) = (x.shape, g.shape);
    let wlen = w.data().len();
    let dw = exec::chunked_sum(x.batch, GRAD_CHUNK, wlen, |range| {
        let mut part = vec![0.0; wlen];
        for b in range {
            conv_weight_grad_sample(c, ins, outs, x.sample(b), g.sample(b), &mut part);
        }
        part
    });
    grad.weight.data_mut().copy_from_slice(&dw);
    if let Some(db) = grad.bias.as_mut() {
        db.fill(0.0);
        let plane = outs.spatial();
        for b in 0..g.batch {
            let gs = g.sample(b);
            for (o, d) in db.iter_mut().enumerate() {
                *d += gs[o * plane..(o + 1) * plane].iter().sum::<f64>();
            }
        }
    }
    let mut dx = Activations::zeros(x.batch, ins);
    exec::for_each_chunk_mut(&mut dx.data, ins.len(), |b, dst| {
        conv_input_grad_sample(c, ins, outs, g.sample(b), dst);
    });
    dx
}

/// Calls `f(weight_index, out_index, in_index)` for every tap that lands
/// inside the input.
#[inline]
fn for_each_tap(c: &Conv2d, ins: Shape, outs: Shape, mut f: impl FnMut(usize, usize, usize)) {
    let w = &c.weight;
    let (s, pad) = (c.stride as isize, c.padding as isize);
    let (ih, iw) = (ins.height as isize, ins.width as isize);
    for o in 0..outs.channels {
        for i in 0..ins.channels {
            for ky in 0..w.kernel_h() {
                for kx in 0..w.kernel_w() {
                    let widx = w.index(o, i, ky, kx);
                    for oy in 0..outs.height {
                        let y = oy as isize * s + ky as isize - pad;
                        if y < 0 || y >= ih {
                            continue;
                        }
                        for ox in 0..outs.width {
                            let xx = ox as isize * s + kx as isize - pad;
                            if xx < 0 || xx >= iw {
                                continue;
                            }
                            let oidx = (o * outs.height + oy) * outs.width + ox;
                            let iidx = (i as isize * ih + y) * iw + xx;
                            f(widx, oidx, iidx as usize);
                        }
                    }
                }
            }
        }
    }
}

fn conv_weight_grad_sample(c: &Conv2d, ins: Shape, outs: Shape, xs: &[f64], gs: &[f64], dw: &mut [f64]) {
    for_each_tap(c, ins, outs, |widx, oidx, iidx| {
        dw[widx] += gs[oidx] * xs[iidx];
    });
}

fn conv_input_grad_sample(c: &Conv2d, ins: Shape, outs: Shape, gs: &[f64], dx: &mut [f64]) {
    let w = c.weight.data();
    for_each_tap(c, ins, outs, |widx, oidx, iidx| {
        dx[iidx] += gs[oidx] * w[widx];
    });
}

fn relu_backward(x: &Activations, g: &Activations) -> Activations {
    Activations {
        batch: g.batch,
        shape: g.shape,
        data: x
            .data
            .iter()
            .zip(&g.data)
            .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
            .collect(),
    }
}

fn maxpool_backward(x: &Activations, g: &Activations, kernel: usize, stride: usize) -> Activations {
    let (ins, outs) = (x.shape, g.shape);
    let mut dx = Activations::zeros(x.batch, ins);
    exec::for_each_chunk_mut(&mut dx.data, ins.len(), |b, dst| {
        let (xs, gs) = (x.sample(b), g.sample(b));
        for ch in 0..outs.channels {
            for oy in 0..outs.height {
                for ox in 0..outs.width {
                    let (idx, _) = pool_argmax(xs, ins, ch, oy, ox, kernel, stride);
                    dst[idx] += gs[(ch * outs.height + oy) * outs.width + ox];
                }
            }
        }
    });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{conv_layer, forward, forward_trace, mlp, resblock, Dtype, Network, Shape};
    use crate::tensor::Matrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Loss `sum(out * r)` so that its output gradient is `r`.
    fn projected_loss(net: &Network, x: &Activations, r: &[f64]) -> f64 {
        forward(net, x).unwrap().data.iter().zip(r).map(|(a, b)| a * b).sum()
    }

    /// Central finite differences over every parameter, step 1e-6.
    fn check_gradients(net: &Network, x: &Activations, seed: u64) {
        let mut rng = crate::rng(seed);
        let out_len = forward(net, x).unwrap().data.len();
        let r: Vec<f64> = (0..out_len).map(|_| rng.sample(StandardNormal)).collect();
        let trace = forward_trace(net, x).unwrap();
        let out = trace.output().clone();
        let g = Activations::new(out.batch, out.shape, r.clone()).unwrap();
        let grads = backward(net, &trace, &g).unwrap();
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
        let h = 1e-6;
        let n_tensors = analytic.len();
        for t in 0..n_tensors {
            for k in 0..analytic[t].len() {
                let mut plus = net.clone();
                plus.tensors_mut()[t][k] += h;
                let mut minus = net.clone();
                minus.tensors_mut()[t][k] -= h;
                let fd = (projected_loss(&plus, x, &r) - projected_loss(&minus, x, &r)) / (2.0 * h);
                let a = analytic[t][k];
                let tol = 1e-5 * a.abs().max(fd.abs()) + 1e-8;
                assert!((a - fd).abs() <= tol, "tensor {t} entry {k}: analytic {a}, fd {fd}");
            }
        }
    }

    fn randn(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let net = Network::new(
            Shape::flat(2),
            vec![Layer::Linear(Linear {
                weight: Matrix::new(2, 1, vec![0.3, -0.7]).unwrap(),
                bias: None,
            })],
            Dtype::F64,
        )
        .unwrap();
        let x = Activations::new(1, Shape::flat(2), vec![2.0, 5.0]).unwrap();
        let trace = forward_trace(&net, &x).unwrap();
        let g = Activations::new(1, Shape::flat(1), vec![3.0]).unwrap();
        let grads = backward(&net, &trace, &g).unwrap();
        assert_eq!(grads.tensors()[0], &[6.0, 15.0]);
        check_gradients(&net, &x, 1);
    }

    #[test]
    fn relu_blocks_negative_preactivations() {
        let net = Network::new(
            Shape::flat(1),
            vec![
                Layer::Linear(Linear {
                    weight: Matrix::new(1, 1, vec![1.0]).unwrap(),
                    bias: None,
                }),
                Layer::Relu,
            ],
            Dtype::F64,
        )
        .unwrap();
        let x = Activations::new(1, Shape::flat(1), vec![-2.0]).unwrap();
        let trace = forward_trace(&net, &x).unwrap();
        let g = Activations::new(1, Shape::flat(1), vec![1.0]).unwrap();
        assert_eq!(backward(&net, &trace, &g).unwrap().tensors()[0], &[0.0]);
    }

    #[test]
    fn mlp_matches_finite_differences() {
        let mut rng = crate::rng(11);
        let net = mlp(&[3, 5, 4, 2], true, &mut rng).unwrap();
        let x = Activations::new(4, Shape::flat(3), randn(&mut rng, 12)).unwrap();
        check_gradients(&net, &x, 12);
    }

    #[test]
    fn conv_matches_finite_differences() {
        let mut rng = crate::rng(5);
        let net = Network::new(
            Shape::new(1, 4, 4),
            vec![conv_layer(1, 2, 3, 1, 1, true, &mut rng)],
            Dtype::F64,
        )
        .unwrap();
        let x = Activations::new(1, Shape::new(1, 4, 4), randn(&mut rng, 16)).unwrap();
        check_gradients(&net, &x, 6);
    }

    #[test]
    fn cnn_with_pool_and_block_matches_finite_differences() {
        let mut rng = crate::rng(9);
        let net = Network::new(
            Shape::new(2, 6, 6),
            vec![
                conv_layer(2, 3, 3, 1, 1, true, &mut rng),
                Layer::Relu,
                Layer::MaxPool2d { kernel: 2, stride: 2 },
                resblock(3, 4, 2, true, &mut rng),
                Layer::Relu,
                Layer::Flatten,
                crate::model::linear_layer(4 * 2 * 2, 2, true, &mut rng),
            ],
            Dtype::F64,
        )
        .unwrap();
        let x = Activations::new(2, Shape::new(2, 6, 6), randn(&mut rng, 144)).unwrap();
        check_gradients(&net, &x, 10);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut rng = crate::rng(1);
        let net = mlp(&[2, 2], false, &mut rng).unwrap();
        let x = Activations::new(1, Shape::flat(2), vec![1.0, 1.0]).unwrap();
        let trace = forward_trace(&net, &x).unwrap();
        let g = Activations::new(1, Shape::flat(3), vec![1.0; 3]).unwrap();
        assert!(matches!(backward(&net, &trace, &g), Err(Error::Shape(_))));
    }
}
