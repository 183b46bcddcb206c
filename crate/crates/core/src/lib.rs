//! Equi-normalization (ENorm) of ReLU networks.
//!
//! Hidden neurons of a ReLU network can be rescaled by positive factors
//! without changing the network function. ENorm picks the factors that
//! minimize the global `l_p` norm of the weights, by block coordinate
//! descent over the layer boundaries. The crate bundles a small dense
//! network runtime (fully connected, convolution, max-pool and residual
//! blocks with learned shortcuts), the balancing algorithm, an SGD trainer
//! that interleaves balancing with gradient steps, diagnostics and I/O.

pub mod balancer;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod io;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic random generator used throughout the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub use balancer::{balance, enorm_cycle, AsymmetricMode, BalanceOptions, BalanceReport, RescalingVector};
pub use data::{Dataset, Targets};
pub use model::{Activations, Dtype, Layer, Network, Shape};
pub use trainer::{train_loop, TrainConfig};
