use std::path::PathBuf;

use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::geometry::GeometryError;
use crate::pipeline::PipelineError;
use crate::staging::StagingError;
use crate::trajstore::TrajStoreError;

/// Coarse failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Integrity,
    Io,
    Interrupted,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Staging(#[from] StagingError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    TrajStore(#[from] TrajStoreError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{species} run failed at step {step}: {source}")]
    AtStep {
        species: String,
        step: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("run interrupted")]
    Interrupted,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Geometry(_) => ErrorClass::Config,
            Error::Io { .. } => ErrorClass::Io,
            Error::Interrupted => ErrorClass::Interrupted,
            Error::AtStep { source, .. } => source.class(),
            Error::Staging(e) => match e {
                StagingError::Io { .. } => ErrorClass::Io,
                StagingError::Config(_) => ErrorClass::Config,
                _ => ErrorClass::Integrity,
            },
            Error::Pipeline(e) => match e {
                PipelineError::Config(_) => ErrorClass::Config,
                PipelineError::Staging(StagingError::Io { .. }) => ErrorClass::Io,
                _ => ErrorClass::Integrity,
            },
            Error::TrajStore(e) => match e {
                TrajStoreError::Io { .. } => ErrorClass::Io,
                _ => ErrorClass::Integrity,
            },
            Error::Diffusion(e) => match e {
                DiffusionError::Config(_) => ErrorClass::Config,
                DiffusionError::Geometry(_) => ErrorClass::Config,
                DiffusionError::MissingProperty(_) => ErrorClass::Integrity,
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
