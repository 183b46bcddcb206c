use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::model::{forward, mlp, Activations, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    #[default]
    Regression,
    Classification,
}

/// `n` standard-normal inputs labelled by a random teacher MLP with layer
/// widths `dims` (input first). Regression keeps the teacher outputs;
/// classification takes their argmax, giving `dims.last()` classes.
pub fn synth_dataset(kind: SynthKind, n: usize, dims: &[usize], seed: u64) -> Result<Dataset> {
    if n == 0 || dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Config(format!(
            "synthetic data needs n > 0 and at least two positive widths, got n={n}, dims={dims:?}"
        )));
    }
    let mut rng = crate::rng(seed);
    let teacher = mlp(dims, true, &mut rng)?;
    let d = dims[0];
    let x: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    let inputs = Activations::new(n, Shape::flat(d), x)?;
    let out = forward(&teacher, &inputs)?;
    let targets = match kind {
        SynthKind::Regression => Targets::Regression(out),
        SynthKind::Classification => {
            let classes = *dims.last().expect("checked");
            if classes < 2 {
                return Err(Error::Config("classification needs at least two classes".into()));
            }
            let labels = (0..n)
                .map(|b| {
                    let z = out.sample(b);
                    z.iter().enumerate().fold(0, |best, (j, v)| if *v > z[best] { j } else { best })
                })
                .collect();
            Targets::Classes { labels, classes }
        }
    };
    Dataset::new(inputs, targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = synth_dataset(SynthKind::Regression, 50, &[4, 8, 2], 3).unwrap();
        let b = synth_dataset(SynthKind::Regression, 50, &[4, 8, 2], 3).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(SynthKind::Regression, 50, &[4, 8, 2], 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn classification_labels_in_range() {
        let ds = synth_dataset(SynthKind::Classification, 100, &[4, 8, 3], 1).unwrap();
        let Targets::Classes { labels, classes } = &ds.targets else { panic!() };
        assert_eq!(*classes, 3);
        assert!(labels.iter().all(|&l| l < 3));
        assert!(synth_dataset(SynthKind::Classification, 10, &[4, 1], 1).is_err());
        assert!(synth_dataset(SynthKind::Regression, 0, &[4, 1], 1).is_err());
    }
}
