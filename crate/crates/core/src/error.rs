use std::path::PathBuf;

use crate::model::NeuronId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{count} unstable neurons exceed the enumeration cap of {cap}")]
    TooManyUnstable { count: usize, cap: usize },

    #[error("neuron {0} is not in the initially-unstable set")]
    NotUnstable(NeuronId),

    #[error("neuron {0} is already split in this domain")]
    AlreadySplit(NeuronId),

    #[error("empty split set yields no cut")]
    NoCut,

    #[error("domain has no unsplit unstable neuron left")]
    Exhausted,

    #[error("dual variable out of domain: {0}")]
    InvalidDual(String),

    #[error("linear program solver failed: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;
