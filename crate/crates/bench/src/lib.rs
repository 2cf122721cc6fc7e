//! Fixtures shared by the benchmarks.

use std::thread;
use std::time::Duration;

use sepstream_core::pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
use sepstream_core::source::{SourceConfig, SyntheticSource};
use sepstream_core::staging::frame::ALL_PROPERTIES;
use sepstream_core::staging::{StageEndpoint, StepFrame};
use sepstream_core::trajstore::TrajectoryDataset;

const TIMEOUT: Duration = Duration::from_secs(120);

pub fn source(n_particles: usize, n_steps: u64) -> SourceConfig {
    SourceConfig {
        n_particles,
        n_steps,
        seed: 7,
        growth_rate: 0.02,
        loss_psi: 1.04,
        ..SourceConfig::default()
    }
}

/// Stream a source through in-process staging and the pipeline.
pub fn stream(cfg: &SourceConfig, workers: usize) -> PipelineOutput {
    let (mut writer, mut reader) = StageEndpoint::in_process(4).open(cfg.species).unwrap();
    let src = cfg.clone();
    let producer = thread::spawn(move || {
        for batch in SyntheticSource::new(src).unwrap() {
            let frame = StepFrame::from_batch_with(&batch, &ALL_PROPERTIES).unwrap();
            if writer.write_frame(frame).is_err() {
                return;
            }
        }
        writer.close().unwrap();
    });
    let pipeline = PipelineConfig { worker_count: workers, ..PipelineConfig::default() };
    let out = run_pipeline(&mut reader, &pipeline, TIMEOUT).unwrap();
    drop(reader);
    producer.join().unwrap();
    out
}

pub fn dataset(n_particles: usize, n_steps: u64) -> TrajectoryDataset {
    let cfg = source(n_particles, n_steps);
    TrajectoryDataset::from_pipeline(&stream(&cfg, 2), cfg.dt).unwrap()
}
