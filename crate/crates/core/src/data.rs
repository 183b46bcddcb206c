//! In-memory datasets.

use crate::error::{Error, Result};
use crate::model::{Activations, Shape};

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// One real-valued target vector per sample.
    Regression(Activations),
    /// One class index per sample, each below `classes`.
    Classes { labels: Vec<usize>, classes: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(a) => a.batch,
            Targets::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Size of the network output these targets are compared with.
    pub fn output_len(&self) -> usize {
        match self {
            Targets::Regression(a) => a.shape.len(),
            Targets::Classes { classes, .. } => *classes,
        }
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Regression(a) => Targets::Regression(gather(a, idx)),
            Targets::Classes { labels, classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Activations,
    pub targets: Targets,
}

fn gather(a: &Activations, idx: &[usize]) -> Activations {
    let mut data = Vec::with_capacity(idx.len() * a.shape.len());
    for &i in idx {
        data.extend_from_slice(a.sample(i));
    }
    Activations {
        batch: idx.len(),
        shape: a.shape,
        data,
    }
}

impl Dataset {
    pub fn new(inputs: Activations, targets: Targets) -> Result<Self> {
        if inputs.batch != targets.len() {
            return Err(Error::Ingestion(format!(
                "{} inputs but {} targets",
                inputs.batch,
                targets.len()
            )));
        }
        if let Targets::Classes { labels, classes } = &targets {
            if let Some((i, l)) = labels.iter().enumerate().find(|(_, l)| **l >= *classes) {
                return Err(Error::Ingestion(format!(
                    "label {l} of sample {i} is out of range for {classes} classes"
                )));
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_shape(&self) -> Shape {
        self.inputs.shape
    }

    /// The samples at `idx`, in that order.
    pub fn batch(&self, idx: &[usize]) -> (Activations, Targets) {
        (gather(&self.inputs, idx), self.targets.select(idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_follow_indices() {
        let x = Activations::new(3, Shape::flat(2), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let ds = Dataset::new(x, Targets::Classes { labels: vec![0, 1, 2], classes: 3 }).unwrap();
        let (b, t) = ds.batch(&[2, 0]);
        assert_eq!(b.data, vec![5.0, 6.0, 1.0, 2.0]);
        assert_eq!(t, Targets::Classes { labels: vec![2, 0], classes: 3 });
    }

    #[test]
    fn rejects_inconsistent_targets() {
        let x = Activations::zeros(2, Shape::flat(1));
        assert!(Dataset::new(x.clone(), Targets::Classes { labels: vec![0], classes: 2 }).is_err());
        assert!(Dataset::new(x, Targets::Classes { labels: vec![0, 2], classes: 2 }).is_err());
    }
}
