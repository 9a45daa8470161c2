//! Experiment harness: configuration, presets for the reference experiments,
//! scheme and particle runs, comparisons, refinement studies and run manifests.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod manifest;

use aggr_core::fv::SchemeError;
use aggr_core::measure::MeasureError;
use aggr_core::particles::ParticleError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run aborted: {0}")]
    Runtime(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit code: 2 for configuration errors, 3 for aborted runs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) | Self::Io { .. } => 3,
        }
    }
}

impl From<SchemeError> for HarnessError {
    fn from(e: SchemeError) -> Self {
        match e {
            SchemeError::InvalidGrid(_) | SchemeError::InvalidParameter { .. } | SchemeError::NotUnitMass(_) => {
                Self::Config(e.to_string())
            }
            SchemeError::SupportOutsideGrid(_) => Self::Config(e.to_string()),
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<ParticleError> for HarnessError {
    fn from(e: ParticleError) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<MeasureError> for HarnessError {
    fn from(e: MeasureError) -> Self {
        Self::Runtime(e.to_string())
    }
}
