//! Equi-normalization: per-neuron rescaling that minimizes the global
//! `l_p` norm of the weights without changing the function of a ReLU network.
//!
//! Each hidden neuron `i` between a layer with incoming weights `W_k[:, i]` and
//! a layer with outgoing weights `W_{k+1}[i, :]` gets the coefficient
//!
//! ```text
//! d[i] = sqrt(||W_{k+1}[i, :]||_p / ||W_k[:, i]||_p)
//! ```
//!
//! which is the exact minimizer of `||W_k D||_p^p + ||D^-1 W_{k+1}||_p^p` in
//! `D`. A cycle applies this update to every boundary from input to output;
//! repeated cycles converge to the unique minimum-norm member of the network's
//! rescaling-equivalence class.

mod asymmetric;
mod cycle;
mod pair;
mod topology;

pub use asymmetric::{asymmetric_coefficients, AsymmetricMode};
pub use cycle::{
    apply_rescaling, balance, enorm_cycle, rescale_momentum, validate_connectivity,
    weighted_lp_norm, BalanceOptions, BalanceReport, CycleReport,
};
pub use pair::{
    apply_pair_rescaling, balance_resblock, block_equivalent_weight, conv_pair_update,
    pair_coefficients, BlockEquivalent, ConvPairUpdate,
};
pub use topology::{Boundary, Topology};

pub(crate) use topology::{weight, weight_data_mut};

use crate::error::{Error, Result};

/// Strictly positive per-neuron rescaling coefficients (the diagonal of `D_k`).
#[derive(Debug, Clone, PartialEq)]
pub struct RescalingVector(Vec<f64>);

impl RescalingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidRescaling(format!(
                "coefficient {i} is {v}, must be finite and positive"
            )));
        }
        Ok(Self(values))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.iter().map(|v| 1.0 / v).collect())
    }

    /// `max_i |d[i] - 1|`.
    pub fn max_deviation(&self) -> f64 {
        self.0.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Elementwise product, composing two successive rescalings.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "composing rescalings of lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect()))
    }
}

impl std::ops::Deref for RescalingVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// One rescaling vector per boundary of a network, in sweep order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkRescaling {
    pub boundaries: Vec<RescalingVector>,
}

impl NetworkRescaling {
    pub fn identity(topology: &Topology) -> Self {
        Self {
            boundaries: topology
                .boundaries
                .iter()
                .map(|b| RescalingVector::ones(b.channels))
                .collect(),
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            boundaries: self.boundaries.iter().map(RescalingVector::inverse).collect(),
        }
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.boundaries.len() != other.boundaries.len() {
            return Err(Error::Shape("rescalings cover different boundaries".into()));
        }
        Ok(Self {
            boundaries: self
                .boundaries
                .iter()
                .zip(&other.boundaries)
                .map(|(a, b)| a.compose(b))
                .collect::<Result<_>>()?,
        })
    }

    pub fn max_deviation(&self) -> f64 {
        self.boundaries
            .iter()
            .map(RescalingVector::max_deviation)
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_against(&self, topology: &Topology) -> Result<()> {
        let widths = topology.widths();
        if self.boundaries.len() != widths.len()
            || self.boundaries.iter().zip(&widths).any(|(d, &w)| d.len() != w)
        {
            return Err(Error::Shape(format!(
                "rescaling widths {:?} do not match network boundaries {:?}",
                self.boundaries.iter().map(RescalingVector::len).collect::<Vec<_>>(),
                widths
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescaling_vector_rejects_non_positive() {
        assert!(RescalingVector::new(vec![1.0, 0.0]).is_err());
        assert!(RescalingVector::new(vec![-1.0]).is_err());
        assert!(RescalingVector::new(vec![f64::NAN]).is_err());
        let d = RescalingVector::new(vec![2.0, 0.5]).unwrap();
        assert_eq!(d.inverse().as_slice(), &[0.5, 2.0]);
        assert_eq!(d.max_deviation(), 1.0);
        assert_eq!(d.compose(&d.inverse()).unwrap(), RescalingVector::ones(2));
    }
}
