use std::path::PathBuf;

/// Errors raised by every part of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    /// A hidden neuron (or channel) has no nonzero incoming or outgoing weight,
    /// so its rescaling coefficient is undefined.
    #[error("disconnected neuron {neuron} at {boundary}: {side} weights are all zero")]
    DisconnectedNeuron {
        boundary: String,
        neuron: usize,
        side: &'static str,
    },

    #[error("invalid rescaling: {0}")]
    InvalidRescaling(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("format error in {context}: {reason}")]
    Format { context: String, reason: String },

    #[error("dataset ingestion error: {0}")]
    Ingestion(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            reason: reason.into(),
        }
    }
}
