//! SGD with momentum, optionally interleaved with ENorm cycles after every
//! step or regularized by learned rescaling coefficients.

mod implicit;
mod loss;
mod train;

pub use implicit::{implicit_enorm_gradients, implicit_penalty, ImplicitGradients};
pub use loss::{correct_predictions, loss_and_grad, LossKind};
pub use train::{evaluate, train_loop, train_loop_with, EpochMetrics, Evaluation, StepMetrics, TrainReport};

use serde::{Deserialize, Serialize};

use crate::balancer::{AsymmetricMode, NetworkRescaling, Topology};
use crate::error::{Error, Result};
use crate::model::{Gradients, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Constant,
    /// Linear interpolation from the initial to the final rate.
    Linear,
    /// `lr_end + (lr0 - lr_end) (1 - t)^2`.
    Quadratic,
}

/// Learning rate at `step` of `total_steps`.
pub fn lr_at(schedule: Schedule, step: usize, total_steps: usize, lr0: f64, lr_end: f64) -> f64 {
    let t = if total_steps == 0 {
        0.0
    } else {
        step.min(total_steps) as f64 / total_steps as f64
    };
    match schedule {
        Schedule::Constant => lr0,
        Schedule::Linear => lr0 + (lr_end - lr0) * t,
        Schedule::Quadratic => lr_end + (lr0 - lr_end) * (1.0 - t) * (1.0 - t),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub schedule: Schedule,
    /// Final rate for the decaying schedules.
    pub lr_end: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    /// ENorm cycles after every SGD step; 0 disables balancing.
    pub enorm_cycles_per_step: usize,
    pub p: f64,
    pub asymmetric: AsymmetricMode,
    /// Seed of the per-epoch shuffling.
    pub seed: u64,
    /// Weight of the learned-rescaling penalty; 0 disables implicit mode.
    pub implicit_lambda: f64,
    /// Learning rate of the rescaling coefficients; the weight rate when unset.
    pub implicit_lr: Option<f64>,
    /// Record elapsed milliseconds per step. Off by default so that metrics
    /// are reproducible bit for bit.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            schedule: Schedule::Constant,
            lr_end: 0.0,
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: 32,
            epochs: 1,
            loss: LossKind::Mse,
            enorm_cycles_per_step: 0,
            p: 2.0,
            asymmetric: AsymmetricMode::Off,
            seed: 0,
            implicit_lambda: 0.0,
            implicit_lr: None,
            record_wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lr_end.is_finite() && self.lr_end >= 0.0) {
            return bad(format!("lr_end must be non-negative, got {}", self.lr_end));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(self.p.is_finite() && self.p > 0.0) {
            return bad(format!("p must be positive, got {}", self.p));
        }
        if !(self.implicit_lambda.is_finite() && self.implicit_lambda >= 0.0) {
            return bad(format!("implicit_lambda must be non-negative, got {}", self.implicit_lambda));
        }
        if self.implicit_lambda > 0.0 && self.enorm_cycles_per_step > 0 {
            return bad("explicit ENorm cycles and implicit_lambda are alternatives; set one to 0".into());
        }
        if let Some(lr) = self.implicit_lr {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("implicit_lr must be positive, got {lr}"));
            }
        }
        self.asymmetric.validate()
    }
}

/// Momentum buffers, plus the learned coefficients in implicit mode.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Gradients,
    pub delta: Option<NetworkRescaling>,
    pub delta_velocity: Vec<Vec<f64>>,
    pub total_steps: usize,
}

impl OptimizerState {
    pub fn new(net: &Network, config: &TrainConfig, total_steps: usize) -> Result<Self> {
        let (delta, delta_velocity) = if config.implicit_lambda > 0.0 {
            let d = NetworkRescaling::identity(&Topology::of(net)?);
            let v = d.boundaries.iter().map(|b| vec![0.0; b.len()]).collect();
            (Some(d), v)
        } else {
            (None, Vec::new())
        };
        Ok(Self {
            velocity: net.zeros_like(),
            delta,
            delta_velocity,
            total_steps,
        })
    }
}

/// `v <- momentum v + g + weight_decay w`, `w <- w - lr v` on every parameter,
/// with `lr` taken from the schedule at `step`.
pub fn sgd_step(
    net: &mut Network,
    grads: &Gradients,
    state: &mut OptimizerState,
    config: &TrainConfig,
    step: usize,
) -> Result<()> {
    if !net.same_architecture(grads) || !net.same_architecture(&state.velocity) {
        return Err(Error::Shape("gradients do not match the network".into()));
    }
    if !grads.all_finite() {
        return Err(Error::Divergence { step, reason: "non-finite gradient".into() });
    }
    let lr = lr_at(config.schedule, step, state.total_steps, config.learning_rate, config.lr_end);
    let (mu, wd) = (config.momentum, config.weight_decay);
    for ((w, g), v) in net
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.velocity.tensors_mut())
    {
        for ((w, g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = mu * *v + g + wd * *w;
            *w -= lr * *v;
        }
    }
    net.round_to_dtype();
    if !net.all_finite() {
        return Err(Error::Divergence { step, reason: "non-finite weight after update".into() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dtype, Layer, Linear, Shape};
    use crate::tensor::Matrix;

    fn scalar(w: f64) -> Network {
        Network::new(
            Shape::flat(1),
            vec![Layer::Linear(Linear { weight: Matrix::new(1, 1, vec![w]).unwrap(), bias: None })],
            Dtype::F64,
        )
        .unwrap()
    }

    fn value(net: &Network) -> f64 {
        net.tensors()[0][0]
    }

    #[test]
    fn plain_step() {
        let mut net = scalar(1.0);
        let cfg = TrainConfig { learning_rate: 0.1, ..Default::default() };
        let mut st = OptimizerState::new(&net, &cfg, 1).unwrap();
        sgd_step(&mut net, &scalar(1.0), &mut st, &cfg, 0).unwrap();
        assert_eq!(value(&net), 0.9);
    }

    #[test]
    fn momentum_unrolled() {
        let mut net = scalar(1.0);
        let cfg = TrainConfig { learning_rate: 1.0, momentum: 0.9, ..Default::default() };
        let mut st = OptimizerState::new(&net, &cfg, 2).unwrap();
        sgd_step(&mut net, &scalar(1.0), &mut st, &cfg, 0).unwrap();
        sgd_step(&mut net, &scalar(1.0), &mut st, &cfg, 1).unwrap();
        assert!((value(&net) + 1.9).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_shrinks() {
        let mut net = scalar(-2.0);
        let cfg = TrainConfig { learning_rate: 0.5, weight_decay: 0.001, ..Default::default() };
        let mut st = OptimizerState::new(&net, &cfg, 10).unwrap();
        let mut prev = value(&net).abs();
        for s in 0..10 {
            sgd_step(&mut net, &scalar(0.0), &mut st, &cfg, s).unwrap();
            assert!(value(&net).abs() < prev);
            prev = value(&net).abs();
        }
    }

    #[test]
    fn non_finite_gradient_diverges() {
        let mut net = scalar(1.0);
        let cfg = TrainConfig::default();
        let mut st = OptimizerState::new(&net, &cfg, 1).unwrap();
        let mut g = scalar(0.0);
        g.tensors_mut()[0][0] = f64::NAN;
        let err = sgd_step(&mut net, &g, &mut st, &cfg, 7).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 7, .. }));
    }

    #[test]
    fn schedules() {
        assert_eq!(lr_at(Schedule::Linear, 10, 10, 0.1, 0.0), 0.0);
        assert_eq!(lr_at(Schedule::Quadratic, 0, 10, 0.1, 1e-5), 0.1);
        assert_eq!(lr_at(Schedule::Constant, 5, 10, 0.1, 0.0), 0.1);
        let mid = lr_at(Schedule::Quadratic, 50, 100, 0.1, 1e-5);
        assert!((mid - (1e-5 + 0.09999 * 0.25)).abs() < 1e-15);
        assert!((mid - 0.0250075).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let both = TrainConfig { enorm_cycles_per_step: 1, implicit_lambda: 0.1, ..Default::default() };
        assert!(both.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
    }
}
