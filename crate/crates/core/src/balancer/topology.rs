//! Where the rescaling boundaries of a network sit, and which weight tensors
//! each boundary multiplies (incoming side) or divides (outgoing side).
//!
//! ReLU, max-pool and flatten layers are transparent: a boundary attaches to
//! the nearest parameterized layers on either side. A residual block owns one
//! internal boundary (between its two convolutions) and feeds both its second
//! convolution and its shortcut into the block's output boundary.

use crate::error::Result;
use crate::model::{Conv2d, Layer, Linear, Network};
use crate::tensor::{abs_pow, scale_cols_in_place, scale_row_groups_in_place, Matrix, Tensor4};

/// One set of hidden neurons or channels sharing a rescaling vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Boundary {
    pub channels: usize,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Part {
    Main,
    Conv1,
    Conv2,
    Skip,
}

/// A weight tensor and the boundaries on its output and input axes.
#[derive(Debug, Clone)]
pub(crate) struct Slot {
    pub layer: usize,
    pub part: Part,
    pub out_boundary: Option<usize>,
    pub in_boundary: Option<usize>,
    /// Consecutive input features sharing one input channel (the spatial size
    /// of a flattened feature map; 1 otherwise).
    pub in_group: usize,
    /// 0-based position among parameterized layers.
    pub ordinal: usize,
}

impl Slot {
    pub fn part_name(&self) -> &'static str {
        match self.part {
            Part::Main => "main",
            Part::Conv1 => "conv1",
            Part::Conv2 => "conv2",
            Part::Skip => "skip",
        }
    }
}

/// Balancing structure of a network, derived from its layer list.
#[derive(Debug, Clone)]
pub struct Topology {
    pub boundaries: Vec<Boundary>,
    pub(crate) slots: Vec<Slot>,
    /// For every layer output: the boundary its channels belong to and the
    /// number of consecutive channels sharing one coefficient.
    pub(crate) activation_scaling: Vec<Option<(usize, usize)>>,
    pub(crate) has_blocks: bool,
    /// `(rows, cols)` of each parameterized layer's 2-D view, in order.
    pub(crate) layer_dims: Vec<(usize, usize)>,
}

impl Topology {
    pub fn of(net: &Network) -> Result<Self> {
        let shapes = net.layer_shapes()?;
        let last_param = net.layers.iter().rposition(Layer::is_parameterized);
        let mut topo = Topology {
            boundaries: Vec::new(),
            slots: Vec::new(),
            activation_scaling: Vec::with_capacity(net.layers.len()),
            has_blocks: false,
            layer_dims: Vec::new(),
        };
        // boundary of the current activation and its channel grouping
        let mut act: Option<usize> = None;
        let mut group = 1usize;
        let mut in_shape = net.input_shape;
        for (idx, layer) in net.layers.iter().enumerate() {
            let is_last = Some(idx) == last_param;
            let ordinal = topo.layer_dims.len();
            let new_boundary = |topo: &mut Topology, channels: usize, label: String| {
                topo.boundaries.push(Boundary { channels, label });
                topo.boundaries.len() - 1
            };
            match layer {
                Layer::Linear(l) => {
                    let out = (!is_last).then(|| {
                        new_boundary(&mut topo, l.out_features(), format!("layer {idx} (linear) output"))
                    });
                    topo.slots.push(Slot {
                        layer: idx,
                        part: Part::Main,
                        out_boundary: out,
                        in_boundary: act,
                        in_group: group,
                        ordinal,
                    });
                    topo.layer_dims.push((l.weight.rows(), l.weight.cols()));
                    act = out;
                    group = 1;
                }
                Layer::Conv2d(c) => {
                    debug_assert_eq!(group, 1);
                    let out = (!is_last).then(|| {
                        new_boundary(
                            &mut topo,
                            c.weight.out_channels(),
                            format!("layer {idx} (conv2d) output"),
                        )
                    });
                    topo.slots.push(Slot {
                        layer: idx,
                        part: Part::Main,
                        out_boundary: out,
                        in_boundary: act,
                        in_group: 1,
                        ordinal,
                    });
                    topo.layer_dims
                        .push((c.weight.filter_len(), c.weight.out_channels()));
                    act = out;
                }
                Layer::ResBlockC(b) => {
                    topo.has_blocks = true;
                    let hidden = new_boundary(
                        &mut topo,
                        b.conv1.weight.out_channels(),
                        format!("layer {idx} (resblock_c) internal"),
                    );
                    let out = (!is_last).then(|| {
                        new_boundary(
                            &mut topo,
                            b.conv2.weight.out_channels(),
                            format!("layer {idx} (resblock_c) output"),
                        )
                    });
                    for (part, out_b, in_b) in [
                        (Part::Conv1, Some(hidden), act),
                        (Part::Conv2, out, Some(hidden)),
                        (Part::Skip, out, act),
                    ] {
                        topo.slots.push(Slot {
                            layer: idx,
                            part,
                            out_boundary: out_b,
                            in_boundary: in_b,
                            in_group: 1,
                            ordinal,
                        });
                    }
                    topo.layer_dims.push((
                        b.conv1.weight.filter_len(),
                        b.conv2.weight.out_channels(),
                    ));
                    act = out;
                }
                Layer::Flatten => group *= in_shape.spatial(),
                Layer::Relu | Layer::MaxPool2d { .. } => {}
            }
            topo.activation_scaling.push(act.map(|b| (b, group)));
            in_shape = shapes[idx];
        }
        Ok(topo)
    }

    pub fn num_boundaries(&self) -> usize {
        self.boundaries.len()
    }

    /// Boundary widths, in sweep order.
    pub fn widths(&self) -> Vec<usize> {
        self.boundaries.iter().map(|b| b.channels).collect()
    }

    pub(crate) fn incoming(&self, b: usize) -> impl Iterator<Item = &Slot> {
        self.slots.iter().filter(move |s| s.out_boundary == Some(b))
    }

    pub(crate) fn outgoing(&self, b: usize) -> impl Iterator<Item = &Slot> {
        self.slots.iter().filter(move |s| s.in_boundary == Some(b))
    }

    /// Number of weight coefficients multiplied or divided by at least one
    /// rescaling coefficient during a cycle.
    pub fn normalized_elements(&self, net: &Network) -> usize {
        self.slots
            .iter()
            .filter(|s| s.out_boundary.is_some() || s.in_boundary.is_some())
            .map(|s| weight(net, s).len())
            .sum()
    }
}

/// Read-only view of one weight tensor.
#[derive(Clone, Copy)]
pub(crate) enum WeightRef<'a> {
    Linear(&'a Matrix),
    Conv(&'a Tensor4),
}

impl WeightRef<'_> {
    pub fn len(&self) -> usize {
        match self {
            WeightRef::Linear(m) => m.data().len(),
            WeightRef::Conv(t) => t.data().len(),
        }
    }

    pub fn data(&self) -> &[f64] {
        match self {
            WeightRef::Linear(m) => m.data(),
            WeightRef::Conv(t) => t.data(),
        }
    }

    /// `|w|^p` summed per output neuron/channel.
    pub fn out_pow_sums(&self, p: f64) -> Vec<f64> {
        match self {
            WeightRef::Linear(m) => m.col_pow_sums(p),
            WeightRef::Conv(t) => t.out_channel_pow_sums(p),
        }
    }

    /// `|w|^p` summed per input channel, `group` consecutive features per channel.
    pub fn in_pow_sums(&self, p: f64, group: usize) -> Vec<f64> {
        match self {
            WeightRef::Linear(m) => {
                let rows = m.row_pow_sums(p);
                rows.chunks(group).map(|c| c.iter().sum()).collect()
            }
            WeightRef::Conv(t) => t.in_channel_pow_sums(p),
        }
    }

    pub fn pow_sum(&self, p: f64) -> f64 {
        self.data().iter().map(|&v| abs_pow(v, p)).sum()
    }

    /// Calls `f(flat_index, out_channel, in_feature)` for every coefficient.
    pub fn for_each_coefficient(&self, mut f: impl FnMut(usize, usize, usize)) {
        match self {
            WeightRef::Linear(m) => {
                for r in 0..m.rows() {
                    for c in 0..m.cols() {
                        f(r * m.cols() + c, c, r);
                    }
                }
            }
            WeightRef::Conv(t) => {
                let k = t.kernel_len();
                for idx in 0..t.data().len() {
                    let slice = idx / k;
                    f(idx, slice / t.in_channels(), slice % t.in_channels());
                }
            }
        }
    }
}

fn conv_part(layer: &Layer, part: Part) -> &Conv2d {
    match (layer, part) {
        (Layer::Conv2d(c), Part::Main) => c,
        (Layer::ResBlockC(b), Part::Conv1) => &b.conv1,
        (Layer::ResBlockC(b), Part::Conv2) => &b.conv2,
        (Layer::ResBlockC(b), Part::Skip) => &b.skip,
        _ => unreachable!("slot does not address a convolution"),
    }
}

fn conv_part_mut(layer: &mut Layer, part: Part) -> &mut Conv2d {
    match (layer, part) {
        (Layer::Conv2d(c), Part::Main) => c,
        (Layer::ResBlockC(b), Part::Conv1) => &mut b.conv1,
        (Layer::ResBlockC(b), Part::Conv2) => &mut b.conv2,
        (Layer::ResBlockC(b), Part::Skip) => &mut b.skip,
        _ => unreachable!("slot does not address a convolution"),
    }
}

pub(crate) fn weight<'a>(net: &'a Network, slot: &Slot) -> WeightRef<'a> {
    match &net.layers[slot.layer] {
        Layer::Linear(Linear { weight, .. }) => WeightRef::Linear(weight),
        other => WeightRef::Conv(&conv_part(other, slot.part).weight),
    }
}

/// Multiplies the output channels of a slot's weight (and bias) by `d`.
pub(crate) fn scale_incoming(net: &mut Network, slot: &Slot, d: &[f64]) {
    match &mut net.layers[slot.layer] {
        Layer::Linear(l) => {
            scale_cols_in_place(&mut l.weight, d);
            scale_bias(&mut l.bias, d);
        }
        other => {
            let c = conv_part_mut(other, slot.part);
            c.weight.scale_out_channels(d);
            scale_bias(&mut c.bias, d);
        }
    }
}

/// Multiplies the input channels of a slot's weight by `d` (pass `1/d` to
/// undo an upstream rescaling).
pub(crate) fn scale_outgoing(net: &mut Network, slot: &Slot, d: &[f64]) {
    match &mut net.layers[slot.layer] {
        Layer::Linear(l) => scale_row_groups_in_place(&mut l.weight, d, slot.in_group),
        other => conv_part_mut(other, slot.part).weight.scale_in_channels(d),
    }
}

fn scale_bias(bias: &mut Option<Vec<f64>>, d: &[f64]) {
    if let Some(b) = bias {
        b.iter_mut().zip(d).for_each(|(v, s)| *v *= s);
    }
}

/// Mutable access to the slot's weight data, for gradient accumulation.
pub(crate) fn weight_data_mut<'a>(net: &'a mut Network, slot: &Slot) -> &'a mut [f64] {
    match &mut net.layers[slot.layer] {
        Layer::Linear(l) => l.weight.data_mut(),
        other => conv_part_mut(other, slot.part).weight.data_mut(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{conv_layer, linear_layer, mlp, resblock, Dtype, Shape};

    #[test]
    fn mlp_boundaries() {
        let net = mlp(&[3, 4, 5, 2], true, &mut crate::rng(0)).unwrap();
        let topo = Topology::of(&net).unwrap();
        assert_eq!(topo.widths(), vec![4, 5]);
        assert_eq!(topo.slots.len(), 3);
        assert_eq!(topo.slots[0].in_boundary, None);
        assert_eq!(topo.slots[2].out_boundary, None);
        assert_eq!(topo.normalized_elements(&net), 12 + 20 + 10);
    }

    #[test]
    fn conv_flatten_linear_groups_features() {
        let mut rng = crate::rng(0);
        let net = Network::new(
            Shape::new(1, 4, 4),
            vec![
                conv_layer(1, 3, 3, 1, 1, false, &mut rng),
                Layer::Relu,
                Layer::MaxPool2d { kernel: 2, stride: 2 },
                Layer::Flatten,
                linear_layer(12, 2, false, &mut rng),
            ],
            Dtype::F64,
        )
        .unwrap();
        let topo = Topology::of(&net).unwrap();
        assert_eq!(topo.widths(), vec![3]);
        assert_eq!(topo.slots[1].in_group, 4);
        assert_eq!(topo.activation_scaling[3], Some((0, 4)));
        assert_eq!(topo.activation_scaling[4], None);
    }

    #[test]
    fn residual_blocks_share_output_boundary() {
        let mut rng = crate::rng(0);
        let net = Network::new(
            Shape::new(2, 4, 4),
            vec![
                resblock(2, 3, 1, false, &mut rng),
                Layer::Relu,
                resblock(3, 3, 1, false, &mut rng),
            ],
            Dtype::F64,
        )
        .unwrap();
        let topo = Topology::of(&net).unwrap();
        // block 1 internal, block 1 output, block 2 internal
        assert_eq!(topo.widths(), vec![3, 3, 3]);
        let incoming: Vec<Part> = topo.incoming(1).map(|s| s.part).collect();
        assert_eq!(incoming, vec![Part::Conv2, Part::Skip]);
        let outgoing: Vec<(usize, Part)> = topo.outgoing(1).map(|s| (s.layer, s.part)).collect();
        assert_eq!(outgoing, vec![(2, Part::Conv1), (2, Part::Skip)]);
    }
}
