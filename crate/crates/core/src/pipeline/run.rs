use std::ops::Range;
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::{
    assign_shards, build_seed_set, trim, Held, Partition, PipelineConfig, PipelineError, RetentionMeter, StepSlice,
    TrajectoryBlock, TrimmedStep,
};
use crate::source::Species;
use crate::staging::{NextStep, StepReader};

#[derive(Debug, Clone, Serialize)]
pub struct StepStat {
    pub step: u64,
    pub time: f64,
    /// Records carried by the incoming frame.
    pub records_in: usize,
    pub kept: usize,
    pub dropped: usize,
    /// Receipt-to-dispatch time on the reader side.
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineStats {
    pub species: Species,
    pub seed_count: usize,
    pub worker_count: usize,
    pub steps: usize,
    /// Largest number of particle records held at once outside the trajectory blocks.
    pub peak_retained: usize,
    pub max_frame: usize,
    pub total_records: u64,
    pub per_step: Vec<StepStat>,
    pub wall_s: f64,
}

impl PipelineStats {
    /// The streaming bound on `peak_retained`.
    pub fn retention_bound(&self) -> usize {
        self.seed_count + self.max_frame
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub species: Species,
    pub properties: Vec<String>,
    /// Time of each step, index = step.
    pub times: Vec<f64>,
    pub partition: Partition,
    /// One block per worker, in shard order.
    pub blocks: Vec<TrajectoryBlock>,
    pub stats: PipelineStats,
}

impl PipelineOutput {
    pub fn ids(&self) -> Vec<u64> {
        self.blocks.iter().flat_map(|b| b.ids.iter().copied()).collect()
    }

    pub fn steps(&self) -> usize {
        self.times.len()
    }
}

type Work = (Arc<(TrimmedStep, Held)>, Range<usize>);

fn await_acks(acks: &mpsc::Receiver<Result<(), PipelineError>>, pending: &mut usize) -> Result<(), PipelineError> {
    let mut first_err = None;
    while *pending > 0 {
        match acks.recv() {
            Ok(res) => {
                *pending -= 1;
                if let Err(e) = res {
                    first_err.get_or_insert(e);
                }
            }
            Err(_) => {
                *pending = 0;
                first_err.get_or_insert(PipelineError::Protocol("trajectory worker exited early".into()));
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

/// Consume a stream to its end and assemble per-worker trajectory blocks.
///
/// The reader fetches step N+1 while workers are still appending step N.
/// Before step N+1 is trimmed the workers must have released step N, so at
/// most one incoming frame and one trimmed step are alive at any time.
pub fn run_pipeline(
    reader: &mut StepReader,
    config: &PipelineConfig,
    timeout: Duration,
) -> Result<PipelineOutput, PipelineError> {
    if let Some((field, msg)) = config.issues().into_iter().next() {
        return Err(PipelineError::Config(format!("{field}: {msg}")));
    }
    let started = Instant::now();
    let meter = RetentionMeter::new();

    let frame0 = match reader.next_step(timeout)? {
        NextStep::Frame(f) => f,
        NextStep::EndOfStream => return Err(PipelineError::Protocol("stream ended before step 0".into())),
        NextStep::Timeout => return Err(PipelineError::Timeout { last: None }),
    };
    if frame0.step != 0 {
        return Err(PipelineError::Integrity {
            step: frame0.step,
            reason: "stream does not start at step 0".into(),
        });
    }
    let t0 = Instant::now();
    let frame0_held = meter.hold(frame0.record_count);
    let species = frame0.species;
    let mut seeds = build_seed_set(&frame0, config.threshold)?;
    let seeds_held = meter.hold(seeds.len());
    let partition = assign_shards(&seeds.ids, config.worker_count)?;
    let blocks: Vec<TrajectoryBlock> = (0..partition.worker_count())
        .map(|k| TrajectoryBlock::from_seeds(k, &seeds, partition.shard(k), config.fill()))
        .collect();
    seeds.release_initial();
    drop(seeds_held);

    let mut stats = PipelineStats {
        species,
        seed_count: seeds.len(),
        worker_count: partition.worker_count(),
        steps: 1,
        peak_retained: 0,
        max_frame: frame0.record_count,
        total_records: frame0.record_count as u64,
        per_step: vec![StepStat {
            step: 0,
            time: frame0.time,
            records_in: frame0.record_count,
            kept: seeds.len(),
            dropped: frame0.record_count - seeds.len(),
            elapsed_s: t0.elapsed().as_secs_f64(),
        }],
        wall_s: 0.0,
    };
    let properties = seeds.properties.clone();
    let mut times = vec![frame0.time];
    drop(frame0_held);
    drop(frame0);
    log::debug!(
        "{species}: {} seeds over {} workers, shard sizes {:?}",
        seeds.len(),
        partition.worker_count(),
        partition.sizes()
    );

    let blocks = thread::scope(|scope| -> Result<Vec<TrajectoryBlock>, PipelineError> {
        let (ack_tx, ack_rx) = mpsc::channel::<Result<(), PipelineError>>();
        let mut work_txs = Vec::with_capacity(blocks.len());
        let mut handles = Vec::with_capacity(blocks.len());
        for mut block in blocks {
            let (tx, rx) = mpsc::sync_channel::<Work>(1);
            let ack = ack_tx.clone();
            handles.push(scope.spawn(move || {
                for (shared, range) in rx {
                    let res = {
                        let (step, _) = &*shared;
                        block.append_step(step.step, StepSlice::new(&step.ids, &step.columns, range))
                    };
                    // release this worker's reference before acknowledging
                    drop(shared);
                    let failed = res.is_err();
                    if ack.send(res).is_err() || failed {
                        break;
                    }
                }
                block
            }));
            work_txs.push(tx);
        }
        drop(ack_tx);

        let mut pending = 0usize;
        let mut expected = 1u64;
        let result = loop {
            let frame = match reader.next_step(timeout) {
                Ok(NextStep::Frame(f)) => f,
                Ok(NextStep::EndOfStream) => break await_acks(&ack_rx, &mut pending),
                Ok(NextStep::Timeout) => {
                    break Err(PipelineError::Timeout {
                        last: Some(expected - 1),
                    })
                }
                Err(e) => break Err(e.into()),
            };
            let t = Instant::now();
            let frame_held = meter.hold(frame.record_count);
            if frame.species != species {
                break Err(PipelineError::Integrity {
                    step: frame.step,
                    reason: format!("{} frame in a {species} stream", frame.species),
                });
            }
            if frame.step != expected {
                break Err(PipelineError::Integrity {
                    step: frame.step,
                    reason: format!("step gap: expected step {expected}"),
                });
            }
            if let Err(e) = await_acks(&ack_rx, &mut pending) {
                break Err(e);
            }
            let trimmed = match trim(&frame, &seeds) {
                Ok(t) => t,
                Err(e) => break Err(e),
            };
            let trimmed_held = meter.hold(trimmed.len());
            stats.max_frame = stats.max_frame.max(frame.record_count);
            stats.total_records += frame.record_count as u64;
            drop(frame_held);
            let records_in = frame.record_count;
            drop(frame);

            let ranges = partition.split(&trimmed.ids);
            times.push(trimmed.time);
            let (step, time, kept, dropped) = (trimmed.step, trimmed.time, trimmed.len(), trimmed.dropped);
            let shared = Arc::new((trimmed, trimmed_held));
            let mut send_failed = false;
            for (tx, range) in work_txs.iter().zip(ranges) {
                if tx.send((shared.clone(), range)).is_err() {
                    send_failed = true;
                    break;
                }
                pending += 1;
            }
            drop(shared);
            if send_failed {
                break await_acks(&ack_rx, &mut pending)
                    .and(Err(PipelineError::Protocol("trajectory worker exited early".into())));
            }
            stats.per_step.push(StepStat {
                step,
                time,
                records_in,
                kept,
                dropped,
                elapsed_s: t.elapsed().as_secs_f64(),
            });
            expected += 1;
        };
        drop(work_txs);
        let blocks: Vec<TrajectoryBlock> = handles
            .into_iter()
            .map(|h| h.join().expect("trajectory worker panicked"))
            .collect();
        result.map(|()| blocks)
    })?;

    stats.steps = times.len();
    stats.peak_retained = meter.peak();
    stats.wall_s = started.elapsed().as_secs_f64();
    Ok(PipelineOutput {
        species,
        properties,
        times,
        partition,
        blocks,
        stats,
    })
}
