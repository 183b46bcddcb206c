//! Training run configuration: a flat TOML table.
//!
//! ```toml
//! learning_rate = 0.05
//! momentum = 0.9
//! batch_size = 32
//! epochs = 10
//! seed = 1
//! enorm_cycles_per_step = 1
//! dataset = "synthetic"
//! samples = 1000
//! teacher = [32, 16, 1]
//! architecture = [32, 64, 64, 32, 1]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_idx_dataset, load_network, synth_dataset, SynthKind};
use crate::balancer::AsymmetricMode;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{mlp, Dtype, Layer, Network};
use crate::trainer::{LossKind, Schedule, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsymmetricKind {
    #[default]
    Off,
    Uniform,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic,
    Idx,
}

fn default_p() -> f64 {
    2.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub lr_end: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub enorm_cycles_per_step: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub asymmetric: AsymmetricKind,
    pub asymmetric_c: Option<f64>,
    #[serde(default)]
    pub implicit_lambda: f64,
    pub implicit_lr: Option<f64>,
    #[serde(default)]
    pub wall_clock: bool,

    pub dataset: DatasetSource,
    pub synthetic_kind: Option<SynthKind>,
    pub samples: Option<usize>,
    /// Teacher widths for synthetic data, input first.
    pub teacher: Option<Vec<usize>>,
    pub data_seed: Option<u64>,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,

    /// Start from a saved network...
    pub network: Option<PathBuf>,
    /// ...or a fresh MLP with these widths.
    pub architecture: Option<Vec<usize>>,
    #[serde(default = "default_true")]
    pub bias: bool,
    pub init_seed: Option<u64>,

    pub output_dir: Option<PathBuf>,
}

fn missing(key: &str, why: &str) -> Error {
    Error::Config(format!("missing key `{key}` ({why})"))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.images, &mut cfg.labels, &mut cfg.network, &mut cfg.output_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        match (&self.network, &self.architecture) {
            (Some(_), Some(_)) => return Err(Error::Config("set only one of `network` and `architecture`".into())),
            (None, None) => return Err(missing("architecture", "or `network`")),
            _ => {}
        }
        match self.dataset {
            DatasetSource::Synthetic => {
                self.samples.ok_or_else(|| missing("samples", "synthetic dataset"))?;
                self.teacher.as_ref().ok_or_else(|| missing("teacher", "synthetic dataset"))?;
            }
            DatasetSource::Idx => {
                self.images.as_ref().ok_or_else(|| missing("images", "idx dataset"))?;
                self.labels.as_ref().ok_or_else(|| missing("labels", "idx dataset"))?;
            }
        }
        self.train_config()?.validate()
    }

    pub fn asymmetric_mode(&self) -> Result<AsymmetricMode> {
        Ok(match self.asymmetric {
            AsymmetricKind::Off => AsymmetricMode::Off,
            AsymmetricKind::Adaptive => AsymmetricMode::Adaptive,
            AsymmetricKind::Uniform => AsymmetricMode::Uniform {
                c: self.asymmetric_c.ok_or_else(|| missing("asymmetric_c", "uniform asymmetric scaling"))?,
            },
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            learning_rate: self.learning_rate,
            schedule: self.schedule,
            lr_end: self.lr_end,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            loss: self.loss,
            enorm_cycles_per_step: self.enorm_cycles_per_step,
            p: self.p,
            asymmetric: self.asymmetric_mode()?,
            seed: self.seed,
            implicit_lambda: self.implicit_lambda,
            implicit_lr: self.implicit_lr,
            record_wall_clock: self.wall_clock,
        })
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match self.dataset {
            DatasetSource::Synthetic => synth_dataset(
                self.synthetic_kind.unwrap_or_default(),
                self.samples.ok_or_else(|| missing("samples", "synthetic dataset"))?,
                self.teacher.as_deref().ok_or_else(|| missing("teacher", "synthetic dataset"))?,
                self.data_seed.unwrap_or(self.seed),
            ),
            DatasetSource::Idx => load_idx_dataset(
                self.images.as_ref().ok_or_else(|| missing("images", "idx dataset"))?,
                self.labels.as_ref().ok_or_else(|| missing("labels", "idx dataset"))?,
            ),
        }
    }

    /// The starting network for `data`. Fresh MLPs over image data get a
    /// leading flatten layer.
    pub fn build_network(&self, data: &Dataset) -> Result<Network> {
        if let Some(path) = &self.network {
            return load_network(path);
        }
        let widths = self.architecture.as_ref().ok_or_else(|| missing("architecture", "or `network`"))?;
        let mut rng = crate::rng(self.init_seed.unwrap_or(self.seed));
        let net = mlp(widths, self.bias, &mut rng)?;
        let shape = data.input_shape();
        if shape.len() != widths[0] {
            return Err(Error::Shape(format!(
                "architecture starts at width {} but samples have {} values",
                widths[0],
                shape.len()
            )));
        }
        if shape == net.input_shape {
            return Ok(net);
        }
        let mut layers = vec![Layer::Flatten];
        layers.extend(net.layers);
        Network::new(shape, layers, Dtype::F64)
    }
}
