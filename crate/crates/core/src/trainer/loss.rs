use serde::{Deserialize, Serialize};

use crate::data::Targets;
use crate::error::{Error, Result};
use crate::model::Activations;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared error averaged over every output element.
    #[default]
    Mse,
    /// Softmax cross-entropy averaged over the batch.
    CrossEntropy,
}

/// Loss value and its gradient with respect to the network output.
pub fn loss_and_grad(kind: LossKind, output: &Activations, targets: &Targets) -> Result<(f64, Activations)> {
    if output.batch != targets.len() || output.shape.len() != targets.output_len() {
        return Err(Error::Shape(format!(
            "network output {}x{} does not match {} targets of size {}",
            output.batch,
            output.shape,
            targets.len(),
            targets.output_len()
        )));
    }
    match (kind, targets) {
        (LossKind::Mse, Targets::Regression(t)) => Ok(mse(output, t)),
        (LossKind::CrossEntropy, Targets::Classes { labels, .. }) => Ok(cross_entropy(output, labels)),
        (kind, _) => Err(Error::Config(format!("loss {kind:?} does not fit these targets"))),
    }
}

fn mse(output: &Activations, target: &Activations) -> (f64, Activations) {
    let n = output.data.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(output.data.len());
    for (y, t) in output.data.iter().zip(&target.data) {
        let r = y - t;
        loss += r * r;
        grad.push(2.0 * r / n);
    }
    (loss / n, Activations { batch: output.batch, shape: output.shape, data: grad })
}

fn cross_entropy(output: &Activations, labels: &[usize]) -> (f64, Activations) {
    let k = output.shape.len();
    let n = output.batch.max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(output.data.len());
    for (b, &label) in labels.iter().enumerate() {
        let z = output.sample(b);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = max + sum.ln();
        loss += log_sum - z[label];
        for (j, v) in z.iter().enumerate() {
            let prob = (v - log_sum).exp();
            grad.push((prob - if j == label { 1.0 } else { 0.0 }) / n);
        }
    }
    debug_assert_eq!(grad.len(), output.batch * k);
    (loss / n, Activations { batch: output.batch, shape: output.shape, data: grad })
}

/// Number of samples whose largest output is at the label (first maximum wins).
pub fn correct_predictions(output: &Activations, labels: &[usize]) -> usize {
    (0..output.batch)
        .filter(|&b| {
            let z = output.sample(b);
            let arg = z
                .iter()
                .enumerate()
                .fold(0, |best, (j, v)| if *v > z[best] { j } else { best });
            arg == labels[b]
        })
        .count()
}
