//! Learned rescaling coefficients: the penalty `l_p(theta, delta) =
//! sum_k ||D_{k-1}^-1 W_k D_k||_p^p` and its analytic gradients.

use crate::balancer::{weight, weight_data_mut, NetworkRescaling, Topology};
use crate::error::{Error, Result};
use crate::model::{Gradients, Network};
use crate::tensor::check_p;

#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitGradients {
    /// `lambda * d penalty / d W`, biases zero.
    pub weights: Gradients,
    /// `lambda * d penalty / d delta`, one vector per boundary.
    pub delta: Vec<Vec<f64>>,
}

fn check_delta(topo: &Topology, delta: &NetworkRescaling) -> Result<()> {
    delta.check_against(topo)?;
    for (b, d) in delta.boundaries.iter().enumerate() {
        if let Some(i) = d.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidRescaling(format!(
                "coefficient {i} of {} is {}",
                topo.boundaries[b].label, d[i]
            )));
        }
    }
    Ok(())
}

/// Walks every weight with its output and input coefficients
/// `(slot_index, flat_index, w, s_out, s_in, out_channel, in_channel)`.
fn visit(
    net: &Network,
    topo: &Topology,
    delta: &NetworkRescaling,
    mut f: impl FnMut(usize, usize, f64, f64, f64, usize, usize),
) {
    for (si, slot) in topo.slots.iter().enumerate() {
        let w = weight(net, slot);
        let data = w.data();
        let out_d = slot.out_boundary.map(|b| &delta.boundaries[b]);
        let in_d = slot.in_boundary.map(|b| &delta.boundaries[b]);
        w.for_each_coefficient(|idx, o, i| {
            let ic = i / slot.in_group;
            let so = out_d.map_or(1.0, |d| d[o]);
            let s_in = in_d.map_or(1.0, |d| d[ic]);
            f(si, idx, data[idx], so, s_in, o, ic);
        });
    }
}

/// `sum_k ||D_{k-1}^-1 W_k D_k||_p^p`, biases excluded.
pub fn implicit_penalty(net: &Network, delta: &NetworkRescaling, p: f64) -> Result<f64> {
    check_p(p)?;
    let topo = Topology::of(net)?;
    check_delta(&topo, delta)?;
    let mut total = 0.0;
    visit(net, &topo, delta, |_, _, w, so, s_in, _, _| {
        total += (w * so / s_in).abs().powf(p);
    });
    Ok(total)
}

/// Gradients of `lambda * implicit_penalty` with respect to the weights and
/// the coefficients. Requires `p >= 1` so the penalty is differentiable at 0.
pub fn implicit_enorm_gradients(
    net: &Network,
    delta: &NetworkRescaling,
    lambda: f64,
    p: f64,
) -> Result<ImplicitGradients> {
    check_p(p)?;
    if p < 1.0 {
        return Err(Error::Unsupported(format!("implicit gradients need p >= 1, got {p}")));
    }
    let topo = Topology::of(net)?;
    check_delta(&topo, delta)?;
    let mut weights = net.zeros_like();
    let mut dd: Vec<Vec<f64>> = delta.boundaries.iter().map(|d| vec![0.0; d.len()]).collect();
    let mut per_slot: Vec<Vec<f64>> = topo.slots.iter().map(|s| vec![0.0; weight(net, s).len()]).collect();

    visit(net, &topo, delta, |si, idx, w, so, s_in, o, ic| {
        let r = so / s_in;
        let term = if p == 2.0 { w * w * r * r } else { (w * r).abs().powf(p) };
        per_slot[si][idx] = if p == 2.0 {
            lambda * 2.0 * w * r * r
        } else {
            lambda * p * w.signum() * w.abs().powf(p - 1.0) * r.powf(p)
        };
        let slot = &topo.slots[si];
        if let Some(b) = slot.out_boundary {
            dd[b][o] += lambda * p * term / so;
        }
        if let Some(b) = slot.in_boundary {
            dd[b][ic] -= lambda * p * term / s_in;
        }
    });
    for (slot, g) in topo.slots.iter().zip(per_slot) {
        weight_data_mut(&mut weights, slot).copy_from_slice(&g);
    }
    Ok(ImplicitGradients { weights, delta: dd })
}
