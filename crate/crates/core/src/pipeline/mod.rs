//! In-situ trajectory assembly.
//!
//! Step 0 defines the tracked population: particles close enough to the
//! separatrix are gathered at a coordinator, sorted by id and split into
//! contiguous shards. Every later step is trimmed to that population, sorted
//! once, and routed shard-by-shard to workers that each own a particle-major
//! [`TrajectoryBlock`]. Only values move; no arithmetic touches the payload.

mod block;
mod meter;
mod partition;
mod run;
mod seed;
mod trim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use block::{StepSlice, TrajectoryBlock};
pub use meter::{Held, RetentionMeter};
pub use partition::{assign_shards, Partition};
pub use run::{run_pipeline, PipelineOutput, PipelineStats, StepStat};
pub use seed::{build_seed_set, build_seed_set_from_parts, merge_sorted_runs, SeedSet};
pub use trim::{trim, TrimmedStep};

use crate::staging::frame::ColumnData;
use crate::staging::{StagingError, StepFrame};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("pipeline configuration error: {0}")]
    Config(String),
    #[error("pipeline protocol error: {0}")]
    Protocol(String),
    #[error("data integrity error at step {step}: {reason}")]
    Integrity { step: u64, reason: String },
    #[error("step {step}: particle id {id} does not belong to worker {worker}")]
    Routing { step: u64, id: u64, worker: usize },
    #[error("step {step}: frame lacks property '{name}'")]
    MissingColumn { step: u64, name: String },
    #[error("no step arrived within the timeout (last step {last:?})")]
    Timeout { last: Option<u64> },
    #[error(transparent)]
    Staging(#[from] StagingError),
}

impl PipelineError {
    /// Step the error refers to, when known.
    pub fn step(&self) -> Option<u64> {
        match self {
            PipelineError::Integrity { step, .. }
            | PipelineError::Routing { step, .. }
            | PipelineError::MissingColumn { step, .. } => Some(*step),
            PipelineError::Staging(StagingError::Integrity { step, .. }) => *step,
            _ => None,
        }
    }
}

/// What absent samples look like in a trajectory block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FillPolicy {
    pub fill_value: f64,
    /// Once a particle misses a step it stays absent for the rest of the run.
    pub absorbing: bool,
}

fn nan() -> f64 {
    f64::NAN
}
fn yes() -> bool {
    true
}

impl Default for FillPolicy {
    fn default() -> Self {
        FillPolicy {
            fill_value: f64::NAN,
            absorbing: true,
        }
    }
}

fn default_threshold() -> f64 {
    0.03
}
fn default_workers() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Upper bound on the separatrix distance proxy at step 0.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_workers")]
    pub worker_count: usize,
    /// Value written for absent samples.
    #[serde(default = "nan")]
    pub fill_value: f64,
    #[serde(default = "yes")]
    pub absorbing: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            threshold: default_threshold(),
            worker_count: default_workers(),
            fill_value: f64::NAN,
            absorbing: true,
        }
    }
}

impl PipelineConfig {
    pub fn fill(&self) -> FillPolicy {
        FillPolicy {
            fill_value: self.fill_value,
            absorbing: self.absorbing,
        }
    }

    pub fn issues(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            out.push(("threshold".into(), format!("must be finite and >= 0, got {}", self.threshold)));
        }
        if self.worker_count < 1 {
            out.push(("worker_count".into(), "must be at least 1".into()));
        }
        out
    }
}

/// Names of a frame's float columns, in frame order.
pub(crate) fn float_layout(frame: &StepFrame) -> Vec<String> {
    frame
        .columns
        .iter()
        .filter(|c| matches!(c.data, ColumnData::F64(_)))
        .map(|c| c.name.clone())
        .collect()
}
