//! Streaming particle-trajectory assembly and separatrix diffusion analysis.
//!
//! A seeded synthetic source emits one frame per simulation step. Frames travel
//! over a staging transport to a pipeline that keeps only the particles near
//! the separatrix at step 0, routes them to workers by id, and assembles
//! particle-major trajectories. Those are stored on disk and reduced to
//! per-region mean-square-displacement and diffusion-coefficient series.

pub mod config;
pub mod diffusion;
pub mod error;
pub mod export;
pub mod geometry;
pub mod pipeline;
pub mod source;
pub mod staging;
pub mod trajstore;
pub mod workflow;

pub use config::{DiffusionSection, OutputSection, RunConfig};
pub use diffusion::{compute_series, DiffusionConfig, DiffusionSeries, Property, SeriesPoint};
pub use error::{Error, ErrorClass, Result};
pub use geometry::{AngleOrigin, RegionSpec, SeparatrixModel};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutput, PipelineStats};
pub use source::{ParticleRecord, SourceConfig, Species, StepBatch, SyntheticSource};
pub use staging::{StageEndpoint, StageMode, StepFrame, StepReader, StepWriter};
pub use trajstore::TrajectoryDataset;
