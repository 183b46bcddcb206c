use super::asymmetric::layer_coefficients;
use super::pair::coefficients_from_pow_sums;
use super::topology::{scale_incoming, scale_outgoing, weight};
use super::{AsymmetricMode, NetworkRescaling, RescalingVector, Topology};
use crate::error::{Error, Result};
use crate::model::{Gradients, Network};
use crate::tensor::check_p;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceOptions {
    pub p: f64,
    pub mode: AsymmetricMode,
    pub max_cycles: usize,
    /// Stop once every coefficient of a cycle is within `tol` of 1.
    pub tol: f64,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        Self {
            p: 2.0,
            mode: AsymmetricMode::Off,
            max_cycles: 100,
            tol: 1e-9,
        }
    }
}

/// Outcome of a single sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleReport {
    /// Weighted objective after the sweep.
    pub lp_norm: f64,
    /// `max |d - 1|` over all coefficients applied by the sweep.
    pub max_deviation: f64,
    pub rescaling: NetworkRescaling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub cycles_run: usize,
    pub initial_lp_norm: f64,
    pub lp_norm_per_cycle: Vec<f64>,
    pub max_dev_per_cycle: Vec<f64>,
    /// `max |d - 1|` of the last cycle (0 when no cycle ran).
    pub max_coeff_deviation: f64,
    pub converged: bool,
    /// Product of all cycle rescalings: the balanced weights equal
    /// `D_{k-1}^-1 W_k D_k` of the input weights.
    pub rescaling: NetworkRescaling,
}

fn slot_coefficients(topo: &Topology, mode: AsymmetricMode, p: f64) -> Result<Vec<f64>> {
    let per_layer = layer_coefficients(mode, p, &topo.layer_dims)?;
    Ok(topo.slots.iter().map(|s| per_layer[s.ordinal]).collect())
}

/// `sum_k c_k ||W_k||_p^p` over all weight tensors, biases excluded. The
/// three convolutions of a residual block share one coefficient.
pub fn weighted_lp_norm(net: &Network, p: f64, mode: AsymmetricMode) -> Result<f64> {
    check_p(p)?;
    let topo = Topology::of(net)?;
    let c = slot_coefficients(&topo, mode, p)?;
    Ok(topo
        .slots
        .iter()
        .zip(&c)
        .map(|(s, c)| c * weight(net, s).pow_sum(p))
        .sum())
}

fn add_into(acc: &mut [f64], v: &[f64], c: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += c * x;
    }
}

/// Weighted `|w|^p` sums of the incoming and outgoing weights of every neuron
/// at boundary `b`.
fn boundary_sums(net: &Network, topo: &Topology, c: &[f64], b: usize, p: f64) -> (Vec<f64>, Vec<f64>) {
    let n = topo.boundaries[b].channels;
    let (mut left, mut right) = (vec![0.0; n], vec![0.0; n]);
    for (slot, &ck) in topo.slots.iter().zip(c) {
        if slot.out_boundary == Some(b) {
            add_into(&mut left, &weight(net, slot).out_pow_sums(p), ck);
        }
        if slot.in_boundary == Some(b) {
            add_into(&mut right, &weight(net, slot).in_pow_sums(p, slot.in_group), ck);
        }
    }
    (left, right)
}

/// Fails with a disconnected-neuron error if any hidden neuron or channel has
/// all-zero incoming or all-zero outgoing weights.
pub fn validate_connectivity(net: &Network) -> Result<()> {
    let topo = Topology::of(net)?;
    let ones = vec![1.0; topo.slots.len()];
    for b in 0..topo.num_boundaries() {
        let (l, r) = boundary_sums(net, &topo, &ones, b, 1.0);
        coefficients_from_pow_sums(&l, &r, 1.0, 1.0, &topo.boundaries[b].label)?;
    }
    Ok(())
}

fn apply_boundary(net: &mut Network, topo: &Topology, b: usize, d: &RescalingVector) {
    let inv = d.inverse();
    for slot in topo.incoming(b) {
        scale_incoming(net, slot, d);
    }
    for slot in topo.outgoing(b) {
        scale_outgoing(net, slot, &inv);
    }
}

/// One left-to-right sweep. Each boundary gets the exact minimizer of the
/// weighted objective given the current weights on both sides, so the
/// objective never increases.
///
/// The network is checked for dead neurons before anything is modified.
pub fn enorm_cycle(net: &mut Network, p: f64, mode: AsymmetricMode) -> Result<CycleReport> {
    check_p(p)?;
    validate_connectivity(net)?;
    let topo = Topology::of(net)?;
    let c = slot_coefficients(&topo, mode, p)?;
    let mut boundaries = Vec::with_capacity(topo.num_boundaries());
    for b in 0..topo.num_boundaries() {
        let (l, r) = boundary_sums(net, &topo, &c, b, p);
        let d = coefficients_from_pow_sums(&l, &r, p, 1.0, &topo.boundaries[b].label)?;
        apply_boundary(net, &topo, b, &d);
        boundaries.push(d);
    }
    let rescaling = NetworkRescaling { boundaries };
    let lp_norm = topo
        .slots
        .iter()
        .zip(&c)
        .map(|(s, ck)| ck * weight(net, s).pow_sum(p))
        .sum();
    Ok(CycleReport {
        lp_norm,
        max_deviation: rescaling.max_deviation(),
        rescaling,
    })
}

/// Runs cycles until the coefficients of a cycle are all within `tol` of 1 or
/// `max_cycles` is reached. Non-convergence is reported, not an error.
///
/// Single-precision networks are rounded back to `f32` once at the end.
pub fn balance(net: &mut Network, opts: &BalanceOptions) -> Result<BalanceReport> {
    check_p(opts.p)?;
    if opts.tol.is_nan() || opts.tol < 0.0 {
        return Err(Error::Config(format!("tolerance must be non-negative, got {}", opts.tol)));
    }
    let topo = Topology::of(net)?;
    let initial_lp_norm = weighted_lp_norm(net, opts.p, opts.mode)?;
    let mut report = BalanceReport {
        cycles_run: 0,
        initial_lp_norm,
        lp_norm_per_cycle: Vec::new(),
        max_dev_per_cycle: Vec::new(),
        max_coeff_deviation: 0.0,
        converged: topo.num_boundaries() == 0,
        rescaling: NetworkRescaling::identity(&topo),
    };
    if report.converged {
        return Ok(report);
    }
    validate_connectivity(net)?;
    while report.cycles_run < opts.max_cycles {
        let cycle = enorm_cycle(net, opts.p, opts.mode)?;
        report.cycles_run += 1;
        report.lp_norm_per_cycle.push(cycle.lp_norm);
        report.max_dev_per_cycle.push(cycle.max_deviation);
        report.max_coeff_deviation = cycle.max_deviation;
        report.rescaling = report.rescaling.compose(&cycle.rescaling)?;
        if cycle.max_deviation < opts.tol {
            report.converged = true;
            break;
        }
    }
    net.round_to_dtype();
    Ok(report)
}

/// Replaces every `W_k` by `D_{k-1}^-1 W_k D_k` and every bias `b_k` by
/// `b_k D_k`.
pub fn apply_rescaling(net: &mut Network, rescaling: &NetworkRescaling) -> Result<()> {
    let topo = Topology::of(net)?;
    rescaling.check_against(&topo)?;
    for (b, d) in rescaling.boundaries.iter().enumerate() {
        apply_boundary(net, &topo, b, d);
    }
    Ok(())
}

/// Transforms gradient-shaped buffers (momentum, gradients) to match weights
/// rescaled by `rescaling`: `G_k -> D_{k-1} G_k D_k^-1` and `g_k -> g_k D_k^-1`.
pub fn rescale_momentum(buffers: &mut Gradients, rescaling: &NetworkRescaling) -> Result<()> {
    apply_rescaling(buffers, &rescaling.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        conv_layer, forward, linear_layer, mlp, resblock, Activations, Dtype, Layer, Linear, Shape,
    };
    use crate::tensor::Matrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn linear(rows: &[&[f64]]) -> Layer {
        Layer::Linear(Linear {
            weight: Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap(),
            bias: None,
        })
    }

    fn net_121() -> Network {
        Network::new(
            Shape::flat(1),
            vec![linear(&[&[1.0, 2.0]]), Layer::Relu, linear(&[&[4.0], &[1.0]])],
            Dtype::F64,
        )
        .unwrap()
    }

    fn random_input(rng: &mut impl Rng, batch: usize, shape: Shape) -> Activations {
        let data = (0..batch * shape.len()).map(|_| rng.sample(StandardNormal)).collect();
        Activations::new(batch, shape, data).unwrap()
    }

    #[test]
    fn one_two_one_reaches_optimum_in_one_cycle() {
        let mut net = net_121();
        assert_eq!(weighted_lp_norm(&net, 2.0, AsymmetricMode::Off).unwrap(), 22.0);
        let rep = enorm_cycle(&mut net, 2.0, AsymmetricMode::Off).unwrap();
        let d = &rep.rescaling.boundaries[0];
        assert!((d[0] - 2.0).abs() <= 1e-12);
        assert!((d[1] - 0.5f64.sqrt()).abs() <= 1e-12);
        assert!((rep.lp_norm - 12.0).abs() <= 1e-12);
        let again = enorm_cycle(&mut net, 2.0, AsymmetricMode::Off).unwrap();
        assert!(again.max_deviation <= 1e-12);
    }

    #[test]
    fn balance_is_idempotent_and_monotone() {
        let mut net = mlp(&[5, 4, 6, 3], true, &mut crate::rng(1)).unwrap();
        let rep = balance(&mut net, &BalanceOptions::default()).unwrap();
        assert!(rep.converged && rep.cycles_run <= 50, "{rep:?}");
        let mut prev = rep.initial_lp_norm;
        for &v in &rep.lp_norm_per_cycle {
            assert!(v <= prev + 1e-12 * prev);
            prev = v;
        }
        let before = net.clone();
        let second = balance(&mut net, &BalanceOptions::default()).unwrap();
        assert_eq!(second.cycles_run, 1);
        assert!(second.max_coeff_deviation < 1e-9);
        for (a, b) in before.tensors().iter().zip(net.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn composed_rescaling_reproduces_balanced_weights() {
        let original = mlp(&[3, 4, 4, 2], true, &mut crate::rng(2)).unwrap();
        let mut balanced = original.clone();
        let rep = balance(&mut balanced, &BalanceOptions::default()).unwrap();
        let mut replay = original.clone();
        apply_rescaling(&mut replay, &rep.rescaling).unwrap();
        for (a, b) in balanced.tensors().iter().zip(replay.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn preserves_function_across_layer_kinds() {
        let mut rng = crate::rng(3);
        let net = Network::new(
            Shape::new(2, 8, 8),
            vec![
                conv_layer(2, 3, 3, 1, 1, true, &mut rng),
                Layer::Relu,
                Layer::MaxPool2d { kernel: 2, stride: 2 },
                resblock(3, 4, 2, true, &mut rng),
                Layer::Relu,
                resblock(4, 4, 1, true, &mut rng),
                Layer::Relu,
                Layer::Flatten,
                linear_layer(16, 3, true, &mut rng),
            ],
            Dtype::F64,
        )
        .unwrap();
        let x = random_input(&mut rng, 10, Shape::new(2, 8, 8));
        let mut balanced = net.clone();
        let rep = balance(&mut balanced, &BalanceOptions::default()).unwrap();
        assert!(rep.lp_norm_per_cycle.last().unwrap() < &rep.initial_lp_norm);
        let diff = forward(&net, &x).unwrap().max_abs_diff(&forward(&balanced, &x).unwrap()).unwrap();
        assert!(diff <= 1e-10, "{diff}");
    }

    #[test]
    fn dead_neuron_is_reported_before_any_change() {
        let mut net = Network::new(
            Shape::flat(1),
            vec![linear(&[&[1.0, 0.0]]), Layer::Relu, linear(&[&[4.0], &[1.0]])],
            Dtype::F64,
        )
        .unwrap();
        let before = net.clone();
        let err = balance(&mut net, &BalanceOptions::default()).unwrap_err();
        match err {
            Error::DisconnectedNeuron { neuron, side, boundary } => {
                assert_eq!((neuron, side), (1, "incoming"));
                assert!(boundary.contains("layer 0"));
            }
            other => panic!("unexpected {other}"),
        }
        assert_eq!(net, before);
    }

    #[test]
    fn uniform_asymmetric_factor() {
        // 3-layer net whose pairs are already balanced for c = 1
        let mut net = Network::new(
            Shape::flat(1),
            vec![linear(&[&[1.0]]), Layer::Relu, linear(&[&[1.0]]), Layer::Relu, linear(&[&[1.0]])],
            Dtype::F64,
        )
        .unwrap();
        let rep = enorm_cycle(&mut net, 2.0, AsymmetricMode::Uniform { c: 1.2 }).unwrap();
        // first boundary sees ratio c_2/c_1 = 1.2^-2 on unit weights
        assert!((rep.rescaling.boundaries[0][0] - 1.2f64.powf(-0.5)).abs() <= 1e-12);
    }

    #[test]
    fn momentum_law_on_single_neuron_chain() {
        let mut buf = Network::new(
            Shape::flat(1),
            vec![
                Layer::Linear(Linear {
                    weight: Matrix::new(1, 1, vec![3.0]).unwrap(),
                    bias: Some(vec![4.0]),
                }),
                Layer::Relu,
                linear(&[&[5.0]]),
            ],
            Dtype::F64,
        )
        .unwrap();
        let d = NetworkRescaling {
            boundaries: vec![RescalingVector::new(vec![0.5]).unwrap()],
        };
        rescale_momentum(&mut buf, &d).unwrap();
        assert_eq!(buf.tensors(), vec![&[6.0][..], &[8.0][..], &[2.5][..]]);
    }

    #[test]
    fn rescaling_width_mismatch() {
        let mut net = net_121();
        let d = NetworkRescaling {
            boundaries: vec![RescalingVector::ones(3)],
        };
        assert!(apply_rescaling(&mut net, &d).is_err());
    }
}
