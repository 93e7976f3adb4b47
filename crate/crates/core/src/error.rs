use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },

    #[error("non-finite {what}")]
    NonFiniteInput { what: &'static str },

    #[error("polyak rate {0} outside [0, 1]")]
    InvalidTau(f64),

    #[error("invalid network shape: {0}")]
    InvalidShape(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("species {0} has no stored transitions")]
    EmptySpecies(usize),

    #[error("species id {z} out of range for {m} species")]
    SpeciesOutOfRange { z: usize, m: usize },

    #[error("descriptor component {index} = {value} outside [0, 1]")]
    DescriptorOutOfBounds { index: usize, value: f64 },

    #[error("episode incomplete: {steps} of {horizon} steps taken")]
    IncompleteEpisode { steps: usize, horizon: usize },

    #[error("episode already finished after {0} steps; reset first")]
    EpisodeOver(usize),

    #[error("genome {0} has not been evaluated")]
    UnevaluatedGenome(u64),

    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),

    #[error("invalid config `{key}`: {reason}")]
    InvalidConfig { key: &'static str, reason: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("malformed {what}: {reason}")]
    Malformed { what: &'static str, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(key: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
