use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Depth-dependent weighting `c_k` of each layer's norm in the balanced
/// objective `sum_k c_k ||W_k||_p^p`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum AsymmetricMode {
    /// `c_k = 1`.
    #[default]
    Off,
    /// `c_k = c^(p (q - k))`: with `c > 1`, later layers end up with larger
    /// weights.
    Uniform { c: f64 },
    /// `c_k = 1 / (n_{k-1} n_k)`, i.e. each layer weighted by its inverse size.
    Adaptive,
}

impl AsymmetricMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            AsymmetricMode::Uniform { c } if !(c.is_finite() && *c > 0.0) => Err(Error::Config(
                format!("uniform asymmetric scaling needs c > 0, got {c}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn is_off(&self) -> bool {
        matches!(self, AsymmetricMode::Off)
    }
}

/// Coefficients `c_1..c_q` for a network of layer widths `n_0..n_q`.
pub fn asymmetric_coefficients(mode: AsymmetricMode, layer_sizes: &[usize], p: f64) -> Result<Vec<f64>> {
    if layer_sizes.len() < 3 {
        return Err(Error::Shape(format!(
            "asymmetric coefficients need at least two layers, got widths {layer_sizes:?}"
        )));
    }
    let dims: Vec<(usize, usize)> = layer_sizes.windows(2).map(|w| (w[0], w[1])).collect();
    layer_coefficients(mode, p, &dims)
}

/// Coefficients for layers whose 2-D weight views have the given `(rows, cols)`.
pub(crate) fn layer_coefficients(mode: AsymmetricMode, p: f64, dims: &[(usize, usize)]) -> Result<Vec<f64>> {
    mode.validate()?;
    let q = dims.len();
    Ok(match mode {
        AsymmetricMode::Off => vec![1.0; q],
        AsymmetricMode::Uniform { c } => (1..=q).map(|k| c.powf(p * (q - k) as f64)).collect(),
        AsymmetricMode::Adaptive => dims.iter().map(|&(r, c)| 1.0 / (r * c) as f64).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_unit_c_is_neutral() {
        let c = asymmetric_coefficients(AsymmetricMode::Uniform { c: 1.0 }, &[4, 3, 2, 1], 2.0).unwrap();
        assert_eq!(c, vec![1.0; 3]);
    }

    #[test]
    fn uniform_geometric_in_depth() {
        let c = asymmetric_coefficients(AsymmetricMode::Uniform { c: 1.2 }, &[2, 2, 2, 2], 2.0).unwrap();
        let expected = [1.2f64.powi(4), 1.2f64.powi(2), 1.0];
        for (a, b) in c.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
        let factor = (c[1] / c[0]).powf(1.0 / 4.0);
        assert!((factor - 1.2f64.powf(-0.5)).abs() < 1e-12);
        assert!((factor - 0.9129).abs() < 1e-4);
    }

    #[test]
    fn adaptive_uses_matrix_sizes() {
        let c = asymmetric_coefficients(AsymmetricMode::Adaptive, &[784, 1000, 500], 2.0).unwrap();
        assert_eq!(c, vec![1.0 / 784_000.0, 1.0 / 500_000.0]);
    }

    #[test]
    fn off_and_invalid() {
        assert_eq!(
            asymmetric_coefficients(AsymmetricMode::Off, &[1, 1, 1], 2.0).unwrap(),
            vec![1.0, 1.0]
        );
        assert!(asymmetric_coefficients(AsymmetricMode::Uniform { c: 0.0 }, &[1, 1, 1], 2.0).is_err());
    }
}
