//! Network files, datasets, run configuration and CSV reports.

mod config;
mod container;
mod idx;
mod reports;
mod synth;

pub use config::{AsymmetricKind, DatasetSource, RunConfig};
pub use container::{
    decode_network, encode_network, load_network, read_manifest, save_network, ConvGeometry, LayerEntry,
    Manifest, TensorEntry, FORMAT_VERSION,
};
pub use idx::{encode_idx_images, encode_idx_labels, load_idx_dataset, parse_idx_images, parse_idx_labels};
pub use reports::{
    write_balance_report, write_energy_profile, write_energy_trace, write_epoch_metrics, write_step_metrics,
};
pub use synth::{synth_dataset, SynthKind};
