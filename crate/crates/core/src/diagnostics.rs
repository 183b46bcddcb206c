//! Measurements and checks on networks: norms, energy profiles, functional
//! equivalence and uniqueness of the balanced representative.

use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::balancer::{
    apply_rescaling, balance, weight, weighted_lp_norm, AsymmetricMode, BalanceOptions, NetworkRescaling,
    RescalingVector, Topology,
};
use crate::error::{Error, Result};
use crate::exec::map_range;
use crate::model::{forward_trace, Activations, Layer, Network, Shape};

/// `sum_k c_k ||W_k||_p^p`, biases excluded.
pub fn global_lp_norm(net: &Network, p: f64, mode: AsymmetricMode) -> Result<f64> {
    weighted_lp_norm(net, p, mode)
}

/// Number of weights rescaled by a cycle: every weight on either side of at
/// least one hidden boundary.
pub fn count_normalized_elements(net: &Network) -> Result<usize> {
    Ok(Topology::of(net)?.normalized_elements(net))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerProfile {
    pub label: String,
    /// l2 norm of the incoming weights of each output neuron or filter.
    pub norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyProfile {
    pub layers: Vec<LayerProfile>,
}

/// Per-neuron l2 norms of every weight tensor: the columns of fully connected
/// weights, whole filters of convolutions. Residual blocks contribute their
/// three convolutions separately.
pub fn energy_profile(net: &Network) -> Result<EnergyProfile> {
    let topo = Topology::of(net)?;
    let mut layers = Vec::with_capacity(topo.slots.len());
    for slot in &topo.slots {
        let kind = net.layers[slot.layer].kind();
        let label = match &net.layers[slot.layer] {
            Layer::ResBlockC(_) => format!("layer {} ({kind}) {}", slot.layer, slot.part_name()),
            _ => format!("layer {} ({kind})", slot.layer),
        };
        let norms = weight(net, slot).out_pow_sums(2.0).into_iter().map(f64::sqrt).collect();
        layers.push(LayerProfile { label, norms });
    }
    Ok(EnergyProfile { layers })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceVerdict {
    pub max_abs_output_diff: f64,
    /// Per layer output, `max |y_a D - y_b|`. Only computed when the
    /// rescaling relating the two networks is known.
    pub max_abs_activation_diff_per_layer: Option<Vec<f64>>,
    pub pass: bool,
}

/// Standard-normal batch of `n` samples.
pub fn random_batch(shape: Shape, n: usize, seed: u64) -> Activations {
    let mut rng = crate::rng(seed);
    let data = (0..n * shape.len()).map(|_| rng.sample(StandardNormal)).collect();
    Activations { batch: n, shape, data }
}

/// Compares the outputs of two networks with the same architecture on
/// `inputs`. If `scaling` is the rescaling taking `a` to `b`, every
/// intermediate activation of `a` times its coefficients is compared with
/// that of `b` as well.
pub fn check_equivalence(
    a: &Network,
    b: &Network,
    inputs: &Activations,
    tol: f64,
    scaling: Option<&NetworkRescaling>,
) -> Result<EquivalenceVerdict> {
    if !a.same_architecture(b) {
        return Err(Error::Shape("networks have different architectures".into()));
    }
    let ta = forward_trace(a, inputs)?;
    let tb = forward_trace(b, inputs)?;
    let out = ta.output().max_abs_diff(tb.output())?;
    let per_layer = match scaling {
        None => None,
        Some(d) => {
            let topo = Topology::of(a)?;
            d.check_against(&topo)?;
            let mut diffs = Vec::with_capacity(a.layers.len());
            for (i, (ya, yb)) in ta.outputs.iter().zip(&tb.outputs).enumerate() {
                let n = ya.shape.len();
                let diff = match topo.activation_scaling[i] {
                    None => ya.max_abs_diff(yb)?,
                    Some((boundary, group)) => {
                        let coeff = &d.boundaries[boundary];
                        let per_coeff = ya.shape.spatial() * group;
                        ya.data
                            .iter()
                            .zip(&yb.data)
                            .enumerate()
                            .map(|(k, (x, y))| (x * coeff[(k % n) / per_coeff] - y).abs())
                            .fold(0.0, f64::max)
                    }
                };
                diffs.push(diff);
            }
            Some(diffs)
        }
    };
    let pass = out <= tol && per_layer.as_ref().is_none_or(|v| v.iter().all(|&x| x <= tol));
    Ok(EquivalenceVerdict {
        max_abs_output_diff: out,
        max_abs_activation_diff_per_layer: per_layer,
        pass,
    })
}

/// Coefficients drawn log-uniformly from `[lo, hi]` for every boundary.
pub fn random_rescaling(topo: &Topology, rng: &mut impl Rng, lo: f64, hi: f64) -> Result<NetworkRescaling> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidRescaling(format!("range [{lo}, {hi}] is not positive")));
    }
    let dist = Uniform::new_inclusive(lo.ln(), hi.ln()).map_err(|e| Error::InvalidRescaling(e.to_string()))?;
    let boundaries = topo
        .boundaries
        .iter()
        .map(|b| RescalingVector::new((0..b.channels).map(|_| rng.sample(dist).exp()).collect()))
        .collect::<Result<_>>()?;
    Ok(NetworkRescaling { boundaries })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonReport {
    /// Largest relative Frobenius distance of any parameter tensor between the
    /// balanced original and a balanced random rescaling of it.
    pub max_deviation: f64,
    pub all_converged: bool,
    pub pass: bool,
}

/// `||a - b||_F / max(||a||_F, ||b||_F)`, max over tensors.
pub fn max_relative_distance(a: &Network, b: &Network) -> f64 {
    a.tensors()
        .iter()
        .zip(b.tensors())
        .map(|(x, y)| {
            let diff: f64 = x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum();
            let nx: f64 = x.iter().map(|u| u * u).sum();
            let ny: f64 = y.iter().map(|v| v * v).sum();
            let scale = nx.max(ny).sqrt();
            if scale == 0.0 {
                0.0
            } else {
                diff.sqrt() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Balances `net` and `n_rescalings` random rescalings of it (log-uniform
/// coefficients in `[0.1, 10]`) and checks that all of them reach the same
/// weights within `tol`.
pub fn canonicalization_check(
    net: &Network,
    n_rescalings: usize,
    seed: u64,
    tol: f64,
    opts: &BalanceOptions,
) -> Result<CanonReport> {
    let topo = Topology::of(net)?;
    let mut reference = net.clone();
    let ref_report = balance(&mut reference, opts)?;
    let mut rng = crate::rng(seed);
    let rescalings = (0..n_rescalings)
        .map(|_| random_rescaling(&topo, &mut rng, 0.1, 10.0))
        .collect::<Result<Vec<_>>>()?;
    let results = map_range(rescalings.len(), |i| -> Result<(f64, bool)> {
        let mut other = net.clone();
        apply_rescaling(&mut other, &rescalings[i])?;
        let rep = balance(&mut other, opts)?;
        Ok((max_relative_distance(&reference, &other), rep.converged))
    });
    let mut max_deviation = 0.0f64;
    let mut all_converged = ref_report.converged;
    for r in results {
        let (dev, conv) = r?;
        max_deviation = max_deviation.max(dev);
        all_converged &= conv;
    }
    Ok(CanonReport {
        max_deviation,
        all_converged,
        pass: all_converged && max_deviation <= tol,
    })
}
