use std::time::Instant;

use rand::seq::SliceRandom;

use super::implicit::implicit_enorm_gradients;
use super::loss::{correct_predictions, loss_and_grad, LossKind};
use super::{sgd_step, OptimizerState, TrainConfig};
use crate::balancer::{enorm_cycle, rescale_momentum, weighted_lp_norm, AsymmetricMode, NetworkRescaling, RescalingVector};
use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::model::{backward, forward, forward_trace, Network};

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    /// Loss of the step's batch, before the update.
    pub train_loss: f64,
    /// `sum_k ||W_k||_2^2` after the step (and its ENorm cycles).
    pub global_l2_norm: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Loss over the whole training set at the end of the epoch.
    pub train_loss: f64,
    pub train_accuracy: Option<f64>,
    pub global_l2_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepMetrics>,
    pub epochs: Vec<EpochMetrics>,
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    /// Learned coefficients in implicit mode.
    pub delta: Option<NetworkRescaling>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Loss (and accuracy for class targets) over a whole dataset.
pub fn evaluate(net: &Network, data: &Dataset, loss: LossKind) -> Result<Evaluation> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Ingestion("empty dataset".into()));
    }
    let (mut total, mut correct) = (0.0, 0usize);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, t) = data.batch(chunk);
        let out = forward(net, &x)?;
        let (l, _) = loss_and_grad(loss, &out, &t)?;
        total += l * chunk.len() as f64;
        if let Targets::Classes { labels, .. } = &t {
            correct += correct_predictions(&out, labels);
        }
    }
    let accuracy = matches!(data.targets, Targets::Classes { .. }).then(|| correct as f64 / n as f64);
    Ok(Evaluation { loss: total / n as f64, accuracy })
}

fn l2(net: &Network) -> Result<f64> {
    weighted_lp_norm(net, 2.0, AsymmetricMode::Off)
}

fn add_into(acc: &mut Network, other: &Network) {
    for (a, b) in acc.tensors_mut().into_iter().zip(other.tensors()) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

fn update_delta(state: &mut OptimizerState, grads: &[Vec<f64>], lr: f64, momentum: f64, step: usize) -> Result<()> {
    let delta = state.delta.as_mut().expect("implicit mode holds coefficients");
    for ((d, v), g) in delta.boundaries.iter_mut().zip(&mut state.delta_velocity).zip(grads) {
        let mut values = d.as_slice().to_vec();
        for ((x, v), g) in values.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = momentum * *v + g;
            *x -= lr * *v;
        }
        *d = RescalingVector::new(values).map_err(|e| Error::Divergence {
            step,
            reason: format!("rescaling coefficient left the positive orthant: {e}"),
        })?;
    }
    Ok(())
}

/// [`train_loop_with`] without an epoch callback.
pub fn train_loop(net: &mut Network, data: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    train_loop_with(net, data, config, |_, _| Ok(()))
}

/// Trains `net` in place. Each step: learning rate, forward, backward, SGD
/// update, then the configured ENorm cycles, whose rescaling is also applied
/// to the momentum buffers. `on_epoch` sees the network after every epoch.
pub fn train_loop_with(
    net: &mut Network,
    data: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &Network) -> Result<()>,
) -> Result<TrainReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Ingestion("empty dataset".into()));
    }
    if data.input_shape() != net.input_shape {
        return Err(Error::Shape(format!(
            "dataset samples are {} but the network expects {}",
            data.input_shape(),
            net.input_shape
        )));
    }
    let steps_per_epoch = data.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut state = OptimizerState::new(net, config, total_steps)?;
    let mut rng = crate::rng(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let start = Instant::now();
    let mut report = TrainReport {
        steps: Vec::with_capacity(total_steps),
        epochs: Vec::with_capacity(config.epochs),
        final_loss: f64::NAN,
        final_accuracy: None,
        delta: None,
    };

    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let lr = super::lr_at(config.schedule, step, total_steps, config.learning_rate, config.lr_end);
            let (x, t) = data.batch(batch);
            let trace = forward_trace(net, &x)?;
            let (loss, loss_grad) = loss_and_grad(config.loss, trace.output(), &t)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { step, reason: format!("loss is {loss}") });
            }
            let mut grads = backward(net, &trace, &loss_grad)?;

            let delta_grads = match &state.delta {
                Some(delta) => {
                    let g = implicit_enorm_gradients(net, delta, config.implicit_lambda, config.p)?;
                    add_into(&mut grads, &g.weights);
                    Some(g.delta)
                }
                None => None,
            };
            sgd_step(net, &grads, &mut state, config, step)?;
            if let Some(g) = delta_grads {
                update_delta(&mut state, &g, config.implicit_lr.unwrap_or(lr), config.momentum, step)?;
            }

            if config.enorm_cycles_per_step > 0 {
                let mut total: Option<NetworkRescaling> = None;
                for _ in 0..config.enorm_cycles_per_step {
                    let c = enorm_cycle(net, config.p, config.asymmetric).map_err(|e| match e {
                        Error::NumericDomain(reason) => Error::Divergence { step, reason },
                        e => e,
                    })?;
                    total = Some(match total {
                        Some(t) => t.compose(&c.rescaling)?,
                        None => c.rescaling,
                    });
                }
                net.round_to_dtype();
                if let Some(d) = total {
                    rescale_momentum(&mut state.velocity, &d)?;
                }
            }

            report.steps.push(StepMetrics {
                step,
                epoch,
                lr,
                train_loss: loss,
                global_l2_norm: l2(net)?,
                wall_ms: if config.record_wall_clock { start.elapsed().as_millis() as u64 } else { 0 },
            });
            step += 1;
        }
        let eval = evaluate(net, data, config.loss)?;
        if !eval.loss.is_finite() {
            return Err(Error::Divergence { step, reason: format!("epoch loss is {}", eval.loss) });
        }
        let m = EpochMetrics {
            epoch,
            train_loss: eval.loss,
            train_accuracy: eval.accuracy,
            global_l2_norm: l2(net)?,
        };
        on_epoch(&m, net)?;
        report.final_loss = m.train_loss;
        report.final_accuracy = m.train_accuracy;
        report.epochs.push(m);
    }
    report.delta = state.delta;
    Ok(report)
}
