//! Two-layer updates: a single pair of matrices, a pair of convolutions, and
//! the three-step update of a residual block.

use super::RescalingVector;
use crate::error::{Error, Result};
use crate::model::{Conv2d, ResBlockC};
use crate::tensor::{
    check_p, conv_from_left_matrix, conv_from_right_matrix, conv_to_left_matrix,
    conv_to_right_matrix, pnorm_cols, pnorm_rows, pow_root, scale_cols, scale_rows, Matrix, Tensor4,
};

/// `d[i] = sqrt(right_norm[i] / left_norm[i]) * c_ratio^(1/(2p))`.
///
/// `left_norms` are the p-norms of each neuron's incoming weights and
/// `right_norms` of its outgoing weights. A zero norm means the neuron is
/// disconnected and has no minimizer.
pub(crate) fn coefficients_from_norms(
    left_norms: &[f64],
    right_norms: &[f64],
    p: f64,
    c_ratio: f64,
    boundary: &str,
) -> Result<RescalingVector> {
    debug_assert_eq!(left_norms.len(), right_norms.len());
    let factor = if c_ratio == 1.0 {
        1.0
    } else {
        c_ratio.powf(1.0 / (2.0 * p))
    };
    let mut d = Vec::with_capacity(left_norms.len());
    for (i, (&l, &r)) in left_norms.iter().zip(right_norms).enumerate() {
        if !(l.is_finite() && r.is_finite()) {
            return Err(Error::NumericDomain(format!(
                "neuron {i} at {boundary} has non-finite weight norms ({l:e} in, {r:e} out)"
            )));
        }
        if l <= 0.0 {
            return Err(Error::DisconnectedNeuron {
                boundary: boundary.to_string(),
                neuron: i,
                side: "incoming",
            });
        }
        if r <= 0.0 {
            return Err(Error::DisconnectedNeuron {
                boundary: boundary.to_string(),
                neuron: i,
                side: "outgoing",
            });
        }
        let v = (r / l).sqrt() * factor;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::NumericDomain(format!(
                "coefficient of neuron {i} at {boundary} is out of range ({l:e} in, {r:e} out)"
            )));
        }
        d.push(v);
    }
    RescalingVector::new(d)
}

/// Same as [`coefficients_from_norms`], from `|w|^p` sums.
pub(crate) fn coefficients_from_pow_sums(
    left: &[f64],
    right: &[f64],
    p: f64,
    c_ratio: f64,
    boundary: &str,
) -> Result<RescalingVector> {
    let l: Vec<f64> = left.iter().map(|&s| pow_root(s, p)).collect();
    let r: Vec<f64> = right.iter().map(|&s| pow_root(s, p)).collect();
    coefficients_from_norms(&l, &r, p, c_ratio, boundary)
}

/// Optimal coefficients for the hidden neurons between `left` (columns are
/// incoming weights) and `right` (rows are outgoing weights).
pub fn pair_coefficients(left: &Matrix, right: &Matrix, p: f64, c_ratio: f64) -> Result<RescalingVector> {
    check_p(p)?;
    if !(c_ratio.is_finite() && c_ratio > 0.0) {
        return Err(Error::NumericDomain(format!("c ratio must be positive, got {c_ratio}")));
    }
    if left.cols() != right.rows() {
        return Err(Error::Shape(format!(
            "left has {} columns but right has {} rows",
            left.cols(),
            right.rows()
        )));
    }
    let l = pnorm_cols(left, p)?;
    let r = pnorm_rows(right, p)?;
    coefficients_from_norms(&l, &r, p, c_ratio, "matrix pair")
}

/// `(left D, D^-1 right, bias D)`.
pub fn apply_pair_rescaling(
    left: &Matrix,
    right: &Matrix,
    bias_left: Option<&[f64]>,
    d: &RescalingVector,
) -> Result<(Matrix, Matrix, Option<Vec<f64>>)> {
    if left.cols() != right.rows() {
        return Err(Error::Shape(format!(
            "left has {} columns but right has {} rows",
            left.cols(),
            right.rows()
        )));
    }
    let bias = match bias_left {
        Some(b) if b.len() != d.len() => {
            return Err(Error::Shape(format!(
                "bias of length {} for {} neurons",
                b.len(),
                d.len()
            )))
        }
        Some(b) => Some(b.iter().zip(d.iter()).map(|(v, s)| v * s).collect()),
        None => None,
    };
    let new_left = scale_cols(left, d)?;
    let new_right = scale_rows(right, d.inverse().as_slice())?;
    Ok((new_left, new_right, bias))
}

/// Result of balancing the channels between two convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvPairUpdate {
    pub conv_k: Tensor4,
    pub conv_k1: Tensor4,
    pub bias_k: Option<Vec<f64>>,
    pub coefficients: RescalingVector,
}

/// Balances the channels produced by `conv_k` and read by `conv_k1`.
pub fn conv_pair_update(
    conv_k: &Tensor4,
    conv_k1: &Tensor4,
    bias_k: Option<&[f64]>,
    p: f64,
    c_ratio: f64,
) -> Result<ConvPairUpdate> {
    if conv_k.out_channels() != conv_k1.in_channels() {
        return Err(Error::Shape(format!(
            "first convolution has {} filters, second reads {} channels",
            conv_k.out_channels(),
            conv_k1.in_channels()
        )));
    }
    let left = conv_to_left_matrix(conv_k);
    let right = conv_to_right_matrix(conv_k1);
    let d = pair_coefficients(&left, &right, p, c_ratio).map_err(|e| match e {
        Error::DisconnectedNeuron { neuron, side, .. } => Error::DisconnectedNeuron {
            boundary: "convolution pair".into(),
            neuron,
            side,
        },
        other => other,
    })?;
    let (left, right, bias) = apply_pair_rescaling(&left, &right, bias_k, &d)?;
    Ok(ConvPairUpdate {
        conv_k: conv_from_left_matrix(&left, conv_k.in_channels(), conv_k.kernel_h(), conv_k.kernel_w())?,
        conv_k1: conv_from_right_matrix(&right, conv_k1.out_channels(), conv_k1.kernel_h(), conv_k1.kernel_w())?,
        bias_k: bias,
        coefficients: d,
    })
}

/// Surrogate kernels standing in for a residual block when balancing the
/// boundaries around it.
///
/// Both are parallel combinations of a main-branch convolution and the 1x1
/// shortcut (zero-padded to the main kernel size), concatenated along the
/// channel axis that does not touch the boundary. The per-channel norms of
/// the concatenation are the norms over the union of both branches.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockEquivalent {
    /// `conv1` stacked over `skip` along output channels: reads the block
    /// input channels; its right-matrix row norms feed the boundary before
    /// the block.
    pub input_side: Tensor4,
    /// `conv2` beside `skip` along input channels: produces the block output
    /// channels; its left-matrix column norms feed the boundary after it.
    pub output_side: Tensor4,
}

fn pad_kernel(t: &Tensor4, kh: usize, kw: usize) -> Tensor4 {
    let mut out = Tensor4::zeros(t.out_channels(), t.in_channels(), kh, kw);
    let (oy, ox) = ((kh - t.kernel_h()) / 2, (kw - t.kernel_w()) / 2);
    for o in 0..t.out_channels() {
        for i in 0..t.in_channels() {
            for y in 0..t.kernel_h() {
                for x in 0..t.kernel_w() {
                    let idx = out.index(o, i, y + oy, x + ox);
                    out.data_mut()[idx] = t.get(o, i, y, x);
                }
            }
        }
    }
    out
}

pub fn block_equivalent_weight(block: &ResBlockC) -> Result<BlockEquivalent> {
    let (c1, c2, skip) = (&block.conv1.weight, &block.conv2.weight, &block.skip.weight);
    if skip.kernel_h() > c1.kernel_h() || skip.kernel_w() > c1.kernel_w() {
        return Err(Error::Shape("shortcut kernel larger than the main branch".into()));
    }

    // stack along output channels: filters of conv1 then filters of skip
    let skip_in = pad_kernel(skip, c1.kernel_h(), c1.kernel_w());
    let mut data = c1.data().to_vec();
    data.extend_from_slice(skip_in.data());
    let input_side = Tensor4::new(
        c1.out_channels() + skip.out_channels(),
        c1.in_channels(),
        c1.kernel_h(),
        c1.kernel_w(),
        data,
    )?;

    // concatenate along input channels: per output filter, conv2 slices then skip slices
    let skip_out = pad_kernel(skip, c2.kernel_h(), c2.kernel_w());
    let (a, b) = (c2.filter_len(), skip_out.filter_len());
    let mut data = Vec::with_capacity(c2.out_channels() * (a + b));
    for o in 0..c2.out_channels() {
        data.extend_from_slice(&c2.data()[o * a..(o + 1) * a]);
        data.extend_from_slice(&skip_out.data()[o * b..(o + 1) * b]);
    }
    let output_side = Tensor4::new(
        c2.out_channels(),
        c2.in_channels() + skip.in_channels(),
        c2.kernel_h(),
        c2.kernel_w(),
        data,
    )?;
    Ok(BlockEquivalent {
        input_side,
        output_side,
    })
}

fn scale_conv_out(c: &mut Conv2d, d: &[f64]) {
    c.weight.scale_out_channels(d);
    if let Some(b) = c.bias.as_mut() {
        b.iter_mut().zip(d).for_each(|(v, s)| *v *= s);
    }
}

/// Rescales a residual block: the block input channels by `1/prev_d` (on
/// `conv1` and `skip`), the block output channels by `next_d` (on `conv2` and
/// `skip`), and the internal `conv1`/`conv2` pair to its two-layer optimum.
///
/// If the block computed `y = f(x)`, the result computes `y * next_d` from
/// `x * prev_d`. Returns the block and the internal coefficients.
pub fn balance_resblock(
    prev_d: &RescalingVector,
    block: &ResBlockC,
    next_d: &RescalingVector,
    p: f64,
) -> Result<(ResBlockC, RescalingVector)> {
    check_p(p)?;
    let cin = block.conv1.weight.in_channels();
    let cout = block.conv2.weight.out_channels();
    if prev_d.len() != cin || next_d.len() != cout {
        return Err(Error::Shape(format!(
            "block maps {cin} to {cout} channels, got rescalings of length {} and {}",
            prev_d.len(),
            next_d.len()
        )));
    }
    let mut b = block.clone();
    let inv_prev = prev_d.inverse();
    b.conv1.weight.scale_in_channels(&inv_prev);
    b.skip.weight.scale_in_channels(&inv_prev);

    scale_conv_out(&mut b.conv2, next_d);
    scale_conv_out(&mut b.skip, next_d);

    // internal pair last, so the returned block sits at its optimum
    let l = b.conv1.weight.out_channel_pow_sums(p);
    let r = b.conv2.weight.in_channel_pow_sums(p);
    let d = coefficients_from_pow_sums(&l, &r, p, 1.0, "residual block internal")?;
    scale_conv_out(&mut b.conv1, &d);
    b.conv2.weight.scale_in_channels(&d.inverse());
    Ok((b, d))
}
